// Thin fetch client for the /v1 endpoints. Never renders anything itself:
// every displayed pixel comes back from GET /v1/render.

import type { CameraJson, JointsJson, PoseJson, StateJson } from "./types";

export class HttpError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface ApiClient {
  fetchState(): Promise<StateJson>;
  fetchJoints(): Promise<JointsJson>;
  putPose(body: PoseJson): Promise<number>;
  putShape(body: { beta: number[] }): Promise<number>;
  putCamera(body: CameraJson): Promise<number>;
  fetchRender(): Promise<Blob>;
  postTexturePatch(png: Blob, rect: [number, number, number, number]): Promise<number>;
}

async function asJson(resp: Response): Promise<any> {
  if (!resp.ok) {
    throw new HttpError(resp.status, await resp.text());
  }
  return resp.json();
}

export function makeApiClient(base: string, fetchFn: typeof fetch = fetch): ApiClient {
  const put = async (path: string, body: unknown): Promise<number> => {
    const obj = await asJson(await fetchFn(base + path, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }));
    return obj.revision as number;
  };
  return {
    fetchState: async () => asJson(await fetchFn(base + "/v1/state")),
    fetchJoints: async () => asJson(await fetchFn(base + "/v1/joints")),
    putPose: (body) => put("/v1/pose", body),
    putShape: (body) => put("/v1/shape", body),
    putCamera: (body) => put("/v1/camera", body),
    fetchRender: async () => {
      const resp = await fetchFn(base + "/v1/render");
      if (!resp.ok) throw new HttpError(resp.status, await resp.text());
      return resp.blob();
    },
    postTexturePatch: async (png, [u0, v0, u1, v1]) => {
      const resp = await fetchFn(
        `${base}/v1/texture/patch?u0=${u0}&v0=${v0}&u1=${u1}&v1=${v1}`,
        { method: "POST", headers: { "Content-Type": "image/png" }, body: png },
      );
      const obj = await asJson(resp);
      return obj.revision as number;
    },
  };
}
