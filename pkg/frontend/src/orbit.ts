// Orbit camera: azimuth/elevation/radius/target -> camera JSON.
// Mirrors the engine's look-at (OpenCV frame: x right, y down, z forward,
// world up +y) so PUT /v1/camera round-trips exactly.

import type { CameraJson } from "./types";

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  radius: number;
  target: [number, number, number];
}

type Vec3 = [number, number, number];

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const cross = (a: Vec3, b: Vec3): Vec3 => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0],
];
const norm = (a: Vec3): number => Math.hypot(a[0], a[1], a[2]);
const unit = (a: Vec3): Vec3 => {
  const n = norm(a);
  return [a[0] / n, a[1] / n, a[2] / n];
};

export function orbitCameraCenter(orbit: OrbitState): Vec3 {
  const az = (orbit.azimuthDeg * Math.PI) / 180;
  const el = (orbit.elevationDeg * Math.PI) / 180;
  return [
    orbit.target[0] + orbit.radius * Math.cos(el) * Math.sin(az),
    orbit.target[1] + orbit.radius * Math.sin(el),
    orbit.target[2] + orbit.radius * Math.cos(el) * Math.cos(az),
  ];
}

export function orbitToCamera(orbit: OrbitState, intr: {
  fx: number; fy: number; cx: number; cy: number;
  width: number; height: number; near: number;
}): CameraJson {
  const center = orbitCameraCenter(orbit);
  const fwd = unit(sub(orbit.target, center));
  const right = unit(cross(fwd, [0, 1, 0]));
  const down = unit(cross(fwd, right));
  const r = [right, down, fwd];
  const t = [0, 1, 2].map(
    (i) => -(r[i][0] * center[0] + r[i][1] * center[1] + r[i][2] * center[2]),
  );
  const m = [
    r[0][0], r[0][1], r[0][2], t[0],
    r[1][0], r[1][1], r[1][2], t[1],
    r[2][0], r[2][1], r[2][2], t[2],
    0, 0, 0, 1,
  ].map((v) => v + 0); // canonicalize -0 so the JSON wire form round-trips
  return { ...intr, world_to_cam: m };
}
