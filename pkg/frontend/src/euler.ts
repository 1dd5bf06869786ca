// Euler-angle conversion pinned to the engine's convention:
// intrinsic X-Y-Z, scalar-first quaternions, q = qx ⊗ qy ⊗ qz.

import type { Quat } from "./types";

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function eulerXyzDegToQuat(xDeg: number, yDeg: number, zDeg: number): Quat {
  const hx = (xDeg * Math.PI) / 360;
  const hy = (yDeg * Math.PI) / 360;
  const hz = (zDeg * Math.PI) / 360;
  const qx: Quat = [Math.cos(hx), Math.sin(hx), 0, 0];
  const qy: Quat = [Math.cos(hy), 0, Math.sin(hy), 0];
  const qz: Quat = [Math.cos(hz), 0, 0, Math.sin(hz)];
  return quatMul(quatMul(qx, qy), qz);
}
