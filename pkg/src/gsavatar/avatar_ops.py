"""Downstream avatar applications: texture editing, shape editing, animation playback.

Texture edits touch only the color plane of the attribute maps; shape edits
re-anchor the maps on the newly shaped surface (so offsets and colors ride
along); the two therefore commute. Animation decodes and weights the avatar
once in canonical space and re-runs only FK + skinning + projection per frame.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import quat
from .avatar import Avatar
from .errors import InvariantViolation, LengthMismatch
from .imageio import Image
from .renderer import Camera, render_gaussians
from .template import BodyTemplate, Pose
from .uvgauss import GaussianAttributeMaps


@dataclass
class TexturePatch:
    rgba: np.ndarray  # (h, w, 4) f32, linear RGB + straight alpha
    rect: tuple[float, float, float, float]  # (u0, v0, u1, v1) in [0, 1]^2

    def __post_init__(self):
        self.rgba = np.ascontiguousarray(self.rgba, dtype=np.float32)
        u0, v0, u1, v1 = self.rect
        if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
            raise InvariantViolation("texture patch: invalid UV rectangle")
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise InvariantViolation("texture patch: raster must be (h, w, 4)")
        a = self.rgba[..., 3]
        if a.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0:
            raise InvariantViolation("texture patch: alpha outside [0, 1]")


@dataclass
class PoseSequence:
    fps: float
    joint_names: tuple[str, ...]
    frames: list[Pose]

    def __post_init__(self):
        self.joint_names = tuple(self.joint_names)
        if not self.frames:
            raise InvariantViolation("pose sequence: needs at least one frame")
        for f in self.frames:
            f.validate()


def edit_texture(maps: GaussianAttributeMaps, patch: TexturePatch) -> GaussianAttributeMaps:
    """Alpha-blend the patch over the color plane; all other planes untouched.

    The covered texel block is every texel whose center falls in [u0,u1) x
    [v0,v1), and the patch is resampled onto it bilinearly (edge-clamped).
    """
    out = maps.copy()
    u0, v0, u1, v1 = patch.rect
    w, h = maps.width, maps.height
    ix0 = int(np.ceil(u0 * w - 0.5))
    ix1 = int(np.ceil(u1 * w - 0.5)) - 1
    iy0 = int(np.ceil(v0 * h - 0.5))
    iy1 = int(np.ceil(v1 * h - 0.5)) - 1
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, w - 1), min(iy1, h - 1)
    if ix0 > ix1 or iy0 > iy1:
        return out

    u = (np.arange(ix0, ix1 + 1) + 0.5) / w
    v = (np.arange(iy0, iy1 + 1) + 0.5) / h
    ph, pw = patch.rgba.shape[:2]
    # continuous patch pixel coordinates of the texel centers, edge-clamped
    sx = np.clip((u - u0) / (u1 - u0) * pw - 0.5, 0.0, pw - 1.0)
    sy = np.clip((v - v0) / (v1 - v0) * ph - 0.5, 0.0, ph - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, pw - 1)
    y1 = np.minimum(y0 + 1, ph - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]

    p = patch.rgba.astype(np.float64)
    sample = (
        p[y0[:, None], x0[None, :]] * (1 - fy) * (1 - fx)
        + p[y0[:, None], x1[None, :]] * (1 - fy) * fx
        + p[y1[:, None], x0[None, :]] * fy * (1 - fx)
        + p[y1[:, None], x1[None, :]] * fy * fx
    )
    rgb = sample[..., :3]
    a = sample[..., 3:4]
    block = out.color[iy0 : iy1 + 1, ix0 : ix1 + 1].astype(np.float64)
    out.color[iy0 : iy1 + 1, ix0 : ix1 + 1] = (a * rgb + (1.0 - a) * block).astype(np.float32)
    return out


def edit_shape(avatar: Avatar, beta) -> Avatar:
    """Re-shape the template surface and re-anchor; the maps are untouched."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != avatar.template.shape_dim:
        raise LengthMismatch(
            f"beta has length {beta.shape[0]}, template expects {avatar.template.shape_dim}"
        )
    return avatar.with_shape(beta)


def render_threads() -> int:
    try:
        n = int(os.environ.get("AVATAR_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = min(os.cpu_count() or 1, 4)
    return n


def animate(avatar: Avatar, seq: PoseSequence, camera: Camera,
            background=None) -> list[Image]:
    """One rendered frame per pose; canonical decode and weights computed once."""
    if seq.joint_names and seq.joint_names != avatar.template.joint_names:
        raise InvariantViolation("pose sequence joint names do not match the template")
    bg = avatar.background if background is None else background
    canonical = avatar.canonical_gaussians()

    def one(pose: Pose) -> Image:
        return render_gaussians(canonical, avatar.template, pose, camera, bg)

    threads = render_threads()
    if threads > 1 and len(seq.frames) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, seq.frames))
    return [one(p) for p in seq.frames]


# ---------------------------------------------------------------------------
# .pose.json I/O

def save_pose_sequence(seq: PoseSequence, path) -> None:
    obj = {
        "fps": seq.fps,
        "joint_names": list(seq.joint_names),
        "frames": [
            {
                "root_t": [float(v) for v in f.root_translation],
                "rot": [[float(c) for c in q] for q in f.joint_rotations],
            }
            for f in seq.frames
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f)
        f.write("\n")


def load_pose_sequence(path, template: BodyTemplate | None = None) -> PoseSequence:
    """Load a pose sequence; frames may carry quaternions ("rot") or axis-angle
    vectors ("rot_aa"), converted on load."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    try:
        names = tuple(str(n) for n in obj["joint_names"])
        frames = []
        for fr in obj["frames"]:
            root = np.asarray(fr["root_t"], dtype=np.float64)
            if "rot" in fr:
                rots = quat.normalize(np.asarray(fr["rot"], dtype=np.float64))
            else:
                rots = quat.from_axis_angle(np.asarray(fr["rot_aa"], dtype=np.float64))
            frames.append(Pose(root, rots))
        seq = PoseSequence(fps=float(obj["fps"]), joint_names=names, frames=frames)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantViolation(f"{path}: malformed pose sequence: {exc}") from exc
    if template is not None and seq.joint_names != template.joint_names:
        raise InvariantViolation(f"{path}: joint names do not match the template")
    return seq
