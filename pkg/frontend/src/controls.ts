// Control panel: one 3-slider group per joint (tree order), beta sliders in
// [-3, 3], a reset button, orbit inputs, and a texture-patch upload form.
// Bindings are by joint NAME, so a reordered /v1/joints listing reorders the
// panel without breaking associations.

import type { JointsJson } from "./types";
import type { UiState } from "./state";

export interface ControlCallbacks {
  onPoseChanged(): void;
  onShapeChanged(): void;
  onReset(): void;
  onPatchUpload(file: File, rect: [number, number, number, number]): void;
}

const AXES = ["x", "y", "z"] as const;

function sliderRow(label: string, min: number, max: number, step: number,
                   value: number, onInput: (v: number) => void): HTMLElement {
  const row = document.createElement("label");
  row.className = "slider-row";
  const span = document.createElement("span");
  span.textContent = label;
  const input = document.createElement("input");
  input.type = "range";
  input.min = String(min);
  input.max = String(max);
  input.step = String(step);
  input.value = String(value);
  const readout = document.createElement("output");
  readout.textContent = input.value;
  input.addEventListener("input", () => {
    readout.textContent = input.value;
    onInput(Number(input.value));
  });
  row.append(span, input, readout);
  return row;
}

export function buildControls(root: HTMLElement, joints: JointsJson, state: UiState,
                              callbacks: ControlCallbacks): void {
  if (!Array.isArray(joints.names) || joints.names.length === 0
      || joints.names.length !== joints.parents.length) {
    const err = document.createElement("div");
    err.className = "error-panel";
    err.textContent = "malformed joint list from /v1/joints";
    root.appendChild(err);
    return;
  }
  root.textContent = "";

  const poseSection = document.createElement("section");
  poseSection.className = "pose-controls";
  joints.names.forEach((name, j) => {
    const group = document.createElement("fieldset");
    group.className = "joint-group";
    group.dataset.joint = name;
    const legend = document.createElement("legend");
    legend.textContent = name;
    group.appendChild(legend);
    AXES.forEach((axis, a) => {
      group.appendChild(sliderRow(axis, -180, 180, 1, state.jointEulerDeg[j][a], (v) => {
        if (state.jointEulerDeg[j][a] === v) return; // dirty tracking: no-op moves stay local
        state.jointEulerDeg[j][a] = v;
        callbacks.onPoseChanged();
      }));
    });
    poseSection.appendChild(group);
  });

  const shapeSection = document.createElement("section");
  shapeSection.className = "shape-controls";
  state.beta.forEach((value, s) => {
    shapeSection.appendChild(sliderRow(`beta ${s}`, -3, 3, 0.05, value, (v) => {
      if (state.beta[s] === v) return;
      state.beta[s] = v;
      callbacks.onShapeChanged();
    }));
  });

  const reset = document.createElement("button");
  reset.className = "reset-button";
  reset.textContent = "Reset";
  reset.addEventListener("click", () => {
    state.jointEulerDeg = state.jointEulerDeg.map(() => [0, 0, 0]);
    state.beta = state.beta.map(() => 0);
    root.querySelectorAll<HTMLInputElement>("input[type=range]").forEach((el) => {
      if (el.closest(".pose-controls") || el.closest(".shape-controls")) {
        el.value = "0";
        const out = el.parentElement?.querySelector("output");
        if (out) out.textContent = "0";
      }
    });
    callbacks.onReset();
  });

  const patchForm = document.createElement("form");
  patchForm.className = "patch-form";
  const file = document.createElement("input");
  file.type = "file";
  file.accept = "image/png";
  const rectInput = document.createElement("input");
  rectInput.type = "text";
  rectInput.value = "0.25,0.25,0.75,0.75";
  rectInput.title = "u0,v0,u1,v1";
  const upload = document.createElement("button");
  upload.textContent = "Apply patch";
  patchForm.append(file, rectInput, upload);
  patchForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const chosen = file.files?.[0];
    const parts = rectInput.value.split(",").map(Number);
    if (chosen && parts.length === 4 && parts.every((v) => Number.isFinite(v))) {
      callbacks.onPatchUpload(chosen, parts as [number, number, number, number]);
    }
  });

  root.append(poseSection, shapeSection, reset, patchForm);
}
