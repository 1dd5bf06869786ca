// Wire types of the /v1 service endpoints.

export type Quat = [number, number, number, number]; // (w, x, y, z)

export interface PoseJson {
  root_t: [number, number, number];
  rot: Quat[];
}

export interface CameraJson {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  near: number;
  world_to_cam: number[]; // 16, row-major
}

export interface StateJson {
  pose: PoseJson;
  beta: number[];
  camera: CameraJson;
  revision: number;
}

export interface JointsJson {
  names: string[];
  parents: number[];
}
