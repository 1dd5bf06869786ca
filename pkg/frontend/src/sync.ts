// Sync engine: pushes dirty state groups to the service and fetches one frame,
// coalescing rapid edits so at most one request cycle is in flight and only
// the latest values ever travel.

import type { ApiClient } from "./api";
import { HttpError } from "./api";
import { applyServerState, cameraBody, poseBody, shapeBody, type UiState } from "./state";

export type DirtyGroup = "pose" | "shape" | "camera";

export interface SyncCallbacks {
  onFrame(frame: Blob, revision: number): void;
  onError(message: string): void;
  onRecovered?(): void;
}

export class SyncEngine {
  private dirty = new Set<DirtyGroup>();
  private rerun = false;
  private stats = { puts: 0, renders: 0 };

  constructor(
    private api: ApiClient,
    private state: UiState,
    private callbacks: SyncCallbacks,
  ) {}

  requestCounts(): { puts: number; renders: number } {
    return { ...this.stats };
  }

  markDirty(group: DirtyGroup): Promise<void> {
    this.dirty.add(group);
    return this.kick();
  }

  /** Fetch a frame without mutating anything (initial display). */
  refresh(): Promise<void> {
    return this.kick();
  }

  private async kick(): Promise<void> {
    if (this.state.pendingRequest) {
      this.rerun = true; // coalesce: latest values picked up by the running cycle
      return;
    }
    this.state.pendingRequest = true;
    try {
      do {
        this.rerun = false;
        await this.cycle();
      } while (this.rerun);
      this.callbacks.onRecovered?.();
    } catch (err) {
      this.callbacks.onError(err instanceof Error ? err.message : String(err));
    } finally {
      this.state.pendingRequest = false;
    }
  }

  private async cycle(): Promise<void> {
    const groups = [...this.dirty];
    this.dirty.clear();
    for (const group of groups) {
      await this.pushGroup(group);
    }
    const frame = await this.api.fetchRender();
    this.stats.renders += 1;
    // revisions are monotone: the frame reflects lastRevision or newer
    this.callbacks.onFrame(frame, this.state.lastRevision);
  }

  private async pushGroup(group: DirtyGroup, retried = false): Promise<void> {
    try {
      this.stats.puts += 1;
      if (group === "pose") {
        this.state.lastRevision = await this.api.putPose(poseBody(this.state));
      } else if (group === "shape") {
        this.state.lastRevision = await this.api.putShape(shapeBody(this.state));
      } else {
        this.state.lastRevision = await this.api.putCamera(cameraBody(this.state));
      }
    } catch (err) {
      if (err instanceof HttpError && err.status === 409 && !retried) {
        // somebody else moved the state: refetch, keep our edit, reapply once
        const server = await this.api.fetchState();
        const mine = group === "pose" ? this.state.jointEulerDeg
          : group === "shape" ? this.state.beta : null;
        applyServerState(this.state, server);
        if (group === "pose" && mine) this.state.jointEulerDeg = mine as [number, number, number][];
        if (group === "shape" && mine) this.state.beta = mine as number[];
        return this.pushGroup(group, true);
      }
      throw err;
    }
  }
}
