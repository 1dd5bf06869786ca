import { describe, expect, it } from "vitest";
import { eulerXyzDegToQuat } from "../src/euler";
import {
  applyServerState,
  cameraBody,
  neutralUiState,
  poseBody,
  quatToEulerXyzDeg,
  shapeBody,
  type UiState,
} from "../src/state";
import type { StateJson } from "../src/types";

const ORBIT = { azimuthDeg: 30, elevationDeg: 10, radius: 2, target: [0, 0.7, 0] as [number, number, number] };
const INTR = { fx: 700, fy: 700, cx: 256, cy: 256, width: 512, height: 512, near: 0.01 };

function someState(): UiState {
  const s = neutralUiState(3, 2, ORBIT, INTR);
  s.jointEulerDeg = [[10, -20, 30], [0, 45, -60], [-170, 80, 5]];
  s.beta = [0.5, -1.25];
  return s;
}

describe("ui state serialization", () => {
  it("PUT bodies survive a JSON round trip losslessly", () => {
    const s = someState();
    for (const body of [poseBody(s), shapeBody(s), cameraBody(s)] as unknown[]) {
      expect(JSON.parse(JSON.stringify(body))).toEqual(body);
    }
  });

  it("slider values round-trip through the pose body within 1e-6 degrees", () => {
    const s = someState();
    const body = poseBody(s);
    for (let j = 0; j < s.jointEulerDeg.length; j++) {
      const back = quatToEulerXyzDeg(body.rot[j]);
      for (let a = 0; a < 3; a++) {
        expect(Math.abs(back[a] - s.jointEulerDeg[j][a])).toBeLessThan(1e-6);
      }
    }
  });

  it("applyServerState recovers sliders and revision from /v1/state", () => {
    const s = neutralUiState(2, 1, ORBIT, INTR);
    const server: StateJson = {
      pose: { root_t: [0, 0, 0], rot: [eulerXyzDegToQuat(15, -40, 7), eulerXyzDegToQuat(0, 0, 90)] },
      beta: [1.5],
      camera: cameraBody(s),
      revision: 42,
    };
    applyServerState(s, server);
    expect(s.lastRevision).toBe(42);
    expect(s.beta).toEqual([1.5]);
    expect(Math.abs(s.jointEulerDeg[0][0] - 15)).toBeLessThan(1e-6);
    expect(Math.abs(s.jointEulerDeg[0][1] + 40)).toBeLessThan(1e-6);
    expect(Math.abs(s.jointEulerDeg[1][2] - 90)).toBeLessThan(1e-6);
  });
});
