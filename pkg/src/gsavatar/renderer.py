"""Perspective projection and tile-based alpha-composited Gaussian splatting.

The rasterizer sorts splats globally front to back (stable, ties by input
index), buckets them into 16x16-pixel tiles, and composites each tile with
chunked vectorized prefix products so the per-pixel math is exactly the
sequential rule:

    if T < 1e-4: stop                      (remaining T composites background)
    a' = min(0.99, alpha * exp(-0.5 d^T cov2d^-1 d))
    if a' < 1/255: skip
    C += color * a' * T;  T *= 1 - a'

`brute_force_render` is the reference oracle: the same per-pixel rule with
every splat visited at every pixel, written as a plain sequential loop with no
tiles, no screen-bound culling and no chunking.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import InvariantViolation
from .imageio import Image
from .skinning import skin_gaussians
from .template import BodyTemplate, Pose, forward_kinematics
from .uvgauss import GaussianSet

TILE = 16
ALPHA_CLAMP = 0.99
SKIP_ALPHA = 1.0 / 255.0
T_TERMINATE = 1e-4
COV_DILATION = 0.3
_CHUNK = 256

# Mahalanobis radius beyond which a' < 1/255 for any alpha <= 1, so the tile
# bound can never drop a contributing splat (keeps the tiled path equal to the
# no-cutoff oracle; see ledger — the classic bound is 3 sigma, this is 3.33).
_BOUND_SIGMA = math.sqrt(2.0 * math.log(255.0))


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray  # (4, 4) rigid
    near: float = 0.01

    def __post_init__(self):
        self.world_to_cam = np.ascontiguousarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("camera: focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvariantViolation("camera: image size must be >= 1")
        lin = self.world_to_cam[:3, :3]
        if np.abs(lin @ lin.T - np.eye(3)).max() > 1e-5:
            raise InvariantViolation("camera: world_to_cam not rigid within 1e-5")
        if np.linalg.det(lin) <= 0:
            raise InvariantViolation("camera: world_to_cam determinant not +1")

    def resized(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                      width, height, self.world_to_cam.copy(), self.near)


def focal_mm_to_pixels(focal_mm: float, image_width: int) -> float:
    """Focal length in mm on a 36 mm-equivalent sensor to pixels."""
    return focal_mm / 36.0 * image_width


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    @classmethod
    def from_focal_mm(cls, focal_mm: float, width: int, height: int, near: float = 0.01):
        f = focal_mm_to_pixels(focal_mm, width)
        return cls(f, f, width / 2.0, height / 2.0, width, height, near)


@dataclass
class Splat2D:
    """Screen-space splats in input (pre-sort) order, culled entries removed."""

    mean2d: np.ndarray   # (M, 2) pixels
    cov2d: np.ndarray    # (M, 2, 2) pixels^2, positive definite
    depth: np.ndarray    # (M,) camera-space z, meters
    color: np.ndarray    # (M, 3)
    alpha: np.ndarray    # (M,)
    source_index: np.ndarray = field(default=None)  # (M,) index into the input GaussianSet
    culled: int = 0

    def __len__(self) -> int:
        return self.mean2d.shape[0]


def save_camera(camera: Camera, path) -> None:
    obj = {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height, "near": camera.near,
        "world_to_cam": [float(v) for v in camera.world_to_cam.reshape(-1)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_camera(path) -> Camera:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    try:
        cam = Camera(
            fx=float(obj["fx"]), fy=float(obj["fy"]),
            cx=float(obj["cx"]), cy=float(obj["cy"]),
            width=int(obj["width"]), height=int(obj["height"]),
            world_to_cam=np.asarray(obj["world_to_cam"], dtype=np.float64).reshape(4, 4),
            near=float(obj.get("near", 0.01)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantViolation(f"{path}: malformed camera file: {exc}") from exc
    cam.validate()
    return cam


# ---------------------------------------------------------------------------
# projection

def project(camera: Camera, g: GaussianSet) -> Splat2D:
    """EWA-style projection: Sigma = R diag(s)^2 R^T, cov2d = J W Sigma W^T J^T + 0.3 I.

    Gaussians at camera-space z <= near are culled silently (counted); output
    order matches input order with culled entries removed.
    """
    camera.validate()
    n = len(g)
    if n == 0:
        empty = np.zeros((0,))
        return Splat2D(np.zeros((0, 2)), np.zeros((0, 2, 2)), empty, np.zeros((0, 3)), empty,
                       source_index=np.zeros(0, dtype=np.int64), culled=0)

    r_wc = camera.world_to_cam[:3, :3]
    t_wc = camera.world_to_cam[:3, 3]
    p_cam = g.mu @ r_wc.T + t_wc
    keep = p_cam[:, 2] > camera.near
    culled = int(n - keep.sum())
    p = p_cam[keep]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]

    mean2d = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)

    rot = quat.to_matrix(g.rot[keep])
    s2 = g.scale[keep] ** 2
    sigma = np.einsum("nij,nj,nkj->nik", rot, s2, rot)
    sigma_cam = np.einsum("ij,njk,lk->nil", r_wc, sigma, r_wc)

    j = np.zeros((p.shape[0], 2, 3))
    j[:, 0, 0] = camera.fx / z
    j[:, 0, 2] = -camera.fx * x / z**2
    j[:, 1, 1] = camera.fy / z
    j[:, 1, 2] = -camera.fy * y / z**2
    cov2d = np.einsum("nij,njk,nlk->nil", j, sigma_cam, j)
    cov2d[:, 0, 0] += COV_DILATION
    cov2d[:, 1, 1] += COV_DILATION

    return Splat2D(
        mean2d=mean2d, cov2d=cov2d, depth=z.copy(),
        color=g.color[keep].copy(), alpha=g.alpha[keep].copy(),
        source_index=np.nonzero(keep)[0], culled=culled,
    )


# ---------------------------------------------------------------------------
# shared splat preparation

def _sorted_splats(splats: Splat2D):
    """Depth-ascending stable order (ties keep input index order)."""
    return np.argsort(splats.depth, kind="stable")


def _conics(cov2d: np.ndarray):
    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    return c / det, -b / det, a / det  # inverse entries: [ia, ib; ib, ic]


def _screen_radius(cov2d: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Per-splat screen radius guaranteeing a' < 1/255 for every pixel outside."""
    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    ln = np.log(np.maximum(alpha, 1e-12) * 255.0)
    r = np.sqrt(2.0 * np.maximum(ln, 0.0) * lam_max) + 1e-6
    r[ln <= 0.0] = -1.0  # alpha <= 1/255 never contributes anywhere
    return r


def _alpha_prime(mean2d, conic, alpha, px, py):
    """a' for a chunk of splats over a block of pixels; skip rule applied as exact zero."""
    ia, ib, ic = conic
    dx = px[None, :] - mean2d[:, 0, None]
    dy = py[None, :] - mean2d[:, 1, None]
    power = -0.5 * (ia[:, None] * dx * dx + ic[:, None] * dy * dy) - ib[:, None] * dx * dy
    ap = np.minimum(alpha[:, None] * np.exp(power), ALPHA_CLAMP)
    ap[ap < SKIP_ALPHA] = 0.0
    return ap


def _composite_block(order, splats, conic, px, py, background):
    """Chunked front-to-back compositing of the ordered splats over one pixel block."""
    npx = px.shape[0]
    color_acc = np.zeros((npx, 3))
    t_run = np.ones(npx)
    for lo in range(0, order.shape[0], _CHUNK):
        sel = order[lo : lo + _CHUNK]
        ap = _alpha_prime(splats.mean2d[sel], tuple(c[sel] for c in conic),
                          splats.alpha[sel], px, py)
        q = np.cumprod(1.0 - ap, axis=0)
        t_before = np.concatenate([np.ones((1, npx)), q[:-1]], axis=0) * t_run[None, :]
        live = t_before >= T_TERMINATE
        w = ap * t_before * live
        color_acc += np.einsum("kp,kc->pc", w, splats.color[sel])
        p_full = t_run[None, :] * q
        crossed = p_full < T_TERMINATE
        any_cross = crossed.any(axis=0)
        k_star = np.argmax(crossed, axis=0)
        t_new = np.where(any_cross, np.take_along_axis(p_full, k_star[None, :], axis=0)[0], p_full[-1])
        t_run = np.where(t_run < T_TERMINATE, t_run, t_new)
        if np.all(t_run < T_TERMINATE):
            break
    color_acc += t_run[:, None] * background[None, :]
    return color_acc, t_run


def rasterize(splats: Splat2D, camera: Camera, background=(0.0, 0.0, 0.0),
              return_transmittance: bool = False):
    """Tile-based front-to-back compositing; returns an Image (plus T map on request)."""
    img_f64, t_map = composite_f64(splats, camera, background)
    img = Image(np.clip(img_f64, 0.0, 1.0).astype(np.float32))
    return (img, t_map) if return_transmittance else img


def composite_f64(splats: Splat2D, camera: Camera, background=(0.0, 0.0, 0.0)):
    """The rasterizer's float64 output before clipping/casting, with the T map."""
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    out = np.empty((h, w, 3))
    t_map = np.ones((h, w))
    if len(splats) == 0:
        out[:] = bg
        return out, t_map

    order = _sorted_splats(splats)
    mean2d = splats.mean2d[order]
    cov2d = splats.cov2d[order]
    sorted_splats = Splat2D(mean2d, cov2d, splats.depth[order],
                            splats.color[order], splats.alpha[order])
    conic = _conics(cov2d)
    radius = _screen_radius(cov2d, sorted_splats.alpha)

    # tile buckets: every tile whose pixel centers could see the splat
    ntx = (w + TILE - 1) // TILE
    nty = (h + TILE - 1) // TILE
    c0 = np.maximum(np.ceil(mean2d[:, 0] - radius - 0.5).astype(np.int64), 0)
    c1 = np.minimum(np.floor(mean2d[:, 0] + radius - 0.5).astype(np.int64), w - 1)
    r0 = np.maximum(np.ceil(mean2d[:, 1] - radius - 0.5).astype(np.int64), 0)
    r1 = np.minimum(np.floor(mean2d[:, 1] + radius - 0.5).astype(np.int64), h - 1)
    ok = (radius > 0.0) & (c0 <= c1) & (r0 <= r1)
    tx0, tx1 = c0 // TILE, c1 // TILE
    ty0, ty1 = r0 // TILE, r1 // TILE
    nx = np.where(ok, tx1 - tx0 + 1, 0)
    ny = np.where(ok, ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())

    img_f64 = np.empty((h, w, 3))
    if total:
        splat_of_pair = np.repeat(np.arange(counts.shape[0]), counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        within = np.arange(total) - starts[splat_of_pair]
        dx = within % nx[splat_of_pair]
        dy = within // nx[splat_of_pair]
        tile_of_pair = (ty0[splat_of_pair] + dy) * ntx + (tx0[splat_of_pair] + dx)
        pair_order = np.argsort(tile_of_pair, kind="stable")
        tile_sorted = tile_of_pair[pair_order]
        splat_sorted = splat_of_pair[pair_order]
        boundaries = np.searchsorted(tile_sorted, np.arange(ntx * nty + 1))
    else:
        boundaries = np.zeros(ntx * nty + 1, dtype=np.int64)
        splat_sorted = np.zeros(0, dtype=np.int64)

    for ty in range(nty):
        ys = ty * TILE
        ye = min(ys + TILE, h)
        for tx in range(ntx):
            xs = tx * TILE
            xe = min(xs + TILE, w)
            tid = ty * ntx + tx
            members = splat_sorted[boundaries[tid] : boundaries[tid + 1]]
            gy, gx = np.mgrid[ys:ye, xs:xe]
            px = gx.ravel() + 0.5
            py = gy.ravel() + 0.5
            if members.size == 0:
                img_f64[ys:ye, xs:xe] = bg
                continue
            block, t_run = _composite_block(members, sorted_splats, conic, px, py, bg)
            img_f64[ys:ye, xs:xe] = block.reshape(ye - ys, xe - xs, 3)
            t_map[ys:ye, xs:xe] = t_run.reshape(ye - ys, xe - xs)

    return img_f64, t_map


def brute_force_render(splats: Splat2D, camera: Camera, background=(0.0, 0.0, 0.0),
                       return_transmittance: bool = False):
    """Reference oracle: the same compositing rule with every splat visited at
    every pixel — full per-pixel depth order, no tiles, no screen-bound culling."""
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    color = np.zeros((h, w, 3))
    t = np.ones((h, w))
    if len(splats) > 0:
        order = _sorted_splats(splats)
        gy, gx = np.mgrid[0:h, 0:w]
        px = gx + 0.5
        py = gy + 0.5
        for k in order:
            a, b, c = splats.cov2d[k, 0, 0], splats.cov2d[k, 0, 1], splats.cov2d[k, 1, 1]
            det = a * c - b * b
            dx = px - splats.mean2d[k, 0]
            dy = py - splats.mean2d[k, 1]
            power = -0.5 * (c * dx * dx + a * dy * dy - 2.0 * b * dx * dy) / det
            ap = np.minimum(splats.alpha[k] * np.exp(power), ALPHA_CLAMP)
            ap = np.where(ap < SKIP_ALPHA, 0.0, ap)
            live = t >= T_TERMINATE
            contrib = np.where(live, ap * t, 0.0)
            color += contrib[:, :, None] * splats.color[k][None, None, :]
            t = np.where(live, t * (1.0 - ap), t)
    color += t[:, :, None] * bg[None, None, :]
    img = Image(np.clip(color, 0.0, 1.0).astype(np.float32))
    return (img, t) if return_transmittance else img


# ---------------------------------------------------------------------------
# full pipeline

def render(avatar, pose: Pose, camera: Camera, background=(0.0, 0.0, 0.0)) -> Image:
    """decode -> query weights -> FK -> skin -> project -> rasterize."""
    g = avatar.canonical_gaussians()
    return render_gaussians(g, avatar.template, pose, camera, background)


def render_gaussians(canonical: GaussianSet, template: BodyTemplate, pose: Pose,
                     camera: Camera, background=(0.0, 0.0, 0.0)) -> Image:
    transforms = forward_kinematics(template, pose)
    posed = skin_gaussians(canonical, transforms)
    splats = project(camera, posed)
    return rasterize(splats, camera, background)


# ---------------------------------------------------------------------------
# camera rigs

def look_at(center: np.ndarray, target: np.ndarray, intr: Intrinsics,
            up=(0.0, 1.0, 0.0)) -> Camera:
    """OpenCV-convention camera (x right, y down, z forward) looking at target."""
    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    down = down / np.linalg.norm(down)
    r = np.stack([right, down, fwd], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ center
    return Camera(intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, w2c, intr.near)


def rig_azimuths_deg(n_views: int) -> np.ndarray:
    return np.arange(n_views) * (360.0 / n_views)


def make_rig(n_views: int, elevation_deg: float, radius: float, target,
             intr: Intrinsics) -> list[Camera]:
    """Evenly spaced look-at cameras around a full horizontal turn (24 and 72 both supported)."""
    if n_views < 1:
        raise InvariantViolation("make_rig: n_views must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    el = math.radians(elevation_deg)
    cams = []
    for az_deg in rig_azimuths_deg(n_views):
        az = math.radians(az_deg)
        offset = radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        cams.append(look_at(target + offset, target, intr))
    return cams


def frame_points(points: np.ndarray, intr: Intrinsics, fill: float = 0.7):
    """Target (bbox center) and orbit radius that frame the points at the given fill."""
    points = np.asarray(points, dtype=np.float64)
    lo, hi = points.min(axis=0), points.max(axis=0)
    target = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    radius = extent * max(intr.fx / intr.width, intr.fy / intr.height) / fill
    return target, radius


def auto_camera(points: np.ndarray, width: int, height: int, focal_mm: float = 50.0,
                azimuth_deg: float = 0.0, elevation_deg: float = 0.0,
                fill: float = 0.7) -> Camera:
    """Camera that frames the given points from an azimuth/elevation on the orbit circle."""
    intr = Intrinsics.from_focal_mm(focal_mm, width, height)
    target, radius = frame_points(points, intr, fill)
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    offset = radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    return look_at(target + offset, target, intr)
