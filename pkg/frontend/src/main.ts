// Viewer entry point: fetch the schema, build the panel, drive the sync loop.

import { makeApiClient } from "./api";
import { buildControls } from "./controls";
import { neutralUiState, applyServerState } from "./state";
import { SyncEngine } from "./sync";

async function boot(): Promise<void> {
  const app = document.querySelector<HTMLElement>("#app");
  if (!app) throw new Error("#app container missing");

  const banner = document.createElement("div");
  banner.className = "banner hidden";
  const retry = document.createElement("button");
  retry.textContent = "Retry";
  const bannerText = document.createElement("span");
  banner.append(bannerText, retry);

  const frame = document.createElement("img");
  frame.className = "frame";
  frame.alt = "avatar render";
  const panel = document.createElement("div");
  panel.className = "panel";
  app.append(banner, frame, panel);

  const api = makeApiClient("");
  const joints = await api.fetchJoints();
  const server = await api.fetchState();

  const cam = server.camera;
  const state = neutralUiState(joints.names.length, server.beta.length, {
    azimuthDeg: 0,
    elevationDeg: 0,
    radius: 2.0,
    target: [0, 0.7, 0],
  }, {
    fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy,
    width: cam.width, height: cam.height, near: cam.near,
  });
  applyServerState(state, server);

  let lastUrl: string | null = null;
  const engine = new SyncEngine(api, state, {
    onFrame: (blob) => {
      const url = URL.createObjectURL(blob);
      frame.src = url;
      if (lastUrl) URL.revokeObjectURL(lastUrl);
      lastUrl = url;
    },
    onError: (message) => {
      bannerText.textContent = `service unreachable: ${message}`;
      banner.classList.remove("hidden");
    },
    onRecovered: () => banner.classList.add("hidden"),
  });
  retry.addEventListener("click", () => void engine.refresh());

  buildControls(panel, joints, state, {
    onPoseChanged: () => void engine.markDirty("pose"),
    onShapeChanged: () => void engine.markDirty("shape"),
    onReset: () => {
      void engine.markDirty("pose");
      void engine.markDirty("shape");
    },
    onPatchUpload: (file, rect) => {
      void (async () => {
        try {
          state.lastRevision = await api.postTexturePatch(file, rect);
          await engine.refresh();
        } catch (err) {
          bannerText.textContent = String(err);
          banner.classList.remove("hidden");
        }
      })();
    },
  });

  // orbit drag on the frame: horizontal = azimuth, vertical = elevation
  let dragging = false;
  let last: [number, number] = [0, 0];
  frame.addEventListener("pointerdown", (ev) => {
    dragging = true;
    last = [ev.clientX, ev.clientY];
    frame.setPointerCapture(ev.pointerId);
  });
  frame.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - last[0];
    const dy = ev.clientY - last[1];
    last = [ev.clientX, ev.clientY];
    state.orbit.azimuthDeg += dx * 0.5;
    state.orbit.elevationDeg = Math.max(-85, Math.min(85, state.orbit.elevationDeg + dy * 0.5));
    void engine.markDirty("camera");
  });
  frame.addEventListener("pointerup", () => {
    dragging = false;
  });
  frame.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state.orbit.radius = Math.max(0.2, state.orbit.radius * (ev.deltaY > 0 ? 1.1 : 0.9));
    void engine.markDirty("camera");
  });

  await engine.refresh();
}

window.addEventListener("DOMContentLoaded", () => {
  void boot();
});
