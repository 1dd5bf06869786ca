// UI state: per-joint Euler sliders (degrees), shape sliders, orbit camera.
// Serialization targets the service's PUT bodies exactly; deserialization
// recovers slider values from a /v1/state payload (used after 409 conflicts).

import { eulerXyzDegToQuat } from "./euler";
import { orbitToCamera, type OrbitState } from "./orbit";
import type { CameraJson, PoseJson, Quat, StateJson } from "./types";

export interface Intr {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  near: number;
}

export interface UiState {
  jointEulerDeg: [number, number, number][]; // one triple per joint, tree order
  beta: number[];
  orbit: OrbitState;
  intr: Intr;
  lastRevision: number;
  pendingRequest: boolean;
}

export function neutralUiState(jointCount: number, betaCount: number,
                               orbit: OrbitState, intr: Intr): UiState {
  return {
    jointEulerDeg: Array.from({ length: jointCount }, () => [0, 0, 0] as [number, number, number]),
    beta: new Array(betaCount).fill(0),
    orbit: { ...orbit, target: [...orbit.target] as [number, number, number] },
    intr: { ...intr },
    lastRevision: -1,
    pendingRequest: false,
  };
}

export function poseBody(state: UiState): PoseJson {
  return {
    root_t: [0, 0, 0],
    rot: state.jointEulerDeg.map(([x, y, z]) => eulerXyzDegToQuat(x, y, z)),
  };
}

export function shapeBody(state: UiState): { beta: number[] } {
  return { beta: [...state.beta] };
}

export function cameraBody(state: UiState): CameraJson {
  return orbitToCamera(state.orbit, state.intr);
}

// Principal-range inverse of the intrinsic X-Y-Z convention (y in [-90, 90]).
export function quatToEulerXyzDeg(q: Quat): [number, number, number] {
  const [w, x, y, z] = q;
  const sinY = 2 * (w * y + x * z);
  const clamped = Math.max(-1, Math.min(1, sinY));
  const ry = Math.asin(clamped);
  const rx = Math.atan2(2 * (w * x - y * z), 1 - 2 * (x * x + y * y));
  const rz = Math.atan2(2 * (w * z - x * y), 1 - 2 * (y * y + z * z));
  const deg = 180 / Math.PI;
  return [rx * deg, ry * deg, rz * deg];
}

export function applyServerState(state: UiState, server: StateJson): void {
  state.jointEulerDeg = server.pose.rot.map((q) => quatToEulerXyzDeg(q));
  state.beta = [...server.beta];
  state.lastRevision = server.revision;
}
