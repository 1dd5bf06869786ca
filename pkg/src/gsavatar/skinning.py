"""Skinning-weight field and linear blend skinning of Gaussian primitives.

Body-region Gaussians take their joint weights from a low-resolution canonical
voxel field queried at the decoded position (offsets included, so clothing
that leaves the body surface still skins sensibly). Hand/face-region Gaussians
keep the weights barycentrically interpolated from the template, which is
stabler for small, topologically rigid parts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import container, quat
from .errors import EmptyTemplate, RegionLabelMissing, WeightsMissing
from .template import MAX_INFLUENCES, REGION_BODY, REGION_FACE, REGION_HAND, BodyTemplate, JointTransforms
from .uvgauss import AnchorTable, GaussianSet

MAGIC = b"WVOL1\n"

KNN_K = 8
KNN_POWER = 2
DISTANCE_FLOOR = 1e-6  # meters
BOUNDS_MARGIN = 0.10   # fraction of extent padded per side (spec floor is 5%)


@dataclass
class WeightVolume:
    resolution: tuple[int, int, int]
    bounds_min: np.ndarray  # (3,) meters
    bounds_max: np.ndarray  # (3,) meters
    weight_idx: np.ndarray  # (gx, gy, gz, 4)
    weight_val: np.ndarray  # (gx, gy, gz, 4), rows sum to 1

    def __post_init__(self):
        self.resolution = tuple(int(g) for g in self.resolution)
        self.bounds_min = np.ascontiguousarray(self.bounds_min, dtype=np.float64).reshape(3)
        self.bounds_max = np.ascontiguousarray(self.bounds_max, dtype=np.float64).reshape(3)
        gx, gy, gz = self.resolution
        self.weight_idx = np.ascontiguousarray(self.weight_idx, dtype=np.uint16).reshape(gx, gy, gz, 4)
        self.weight_val = np.ascontiguousarray(self.weight_val, dtype=np.float32).reshape(gx, gy, gz, 4)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bounds_max - self.bounds_min) / np.asarray(self.resolution, dtype=np.float64)

    def voxel_centers_axis(self, axis: int) -> np.ndarray:
        g = self.resolution[axis]
        return self.bounds_min[axis] + (np.arange(g) + 0.5) * self.cell_size[axis]


def _top4_renormalized(dense: np.ndarray):
    """Keep the 4 largest weights per row (deterministic ties) and renormalize."""
    n, nj = dense.shape
    take = min(MAX_INFLUENCES, nj)
    order = np.argsort(-dense, axis=1, kind="stable")[:, :take]
    val = np.take_along_axis(dense, order, axis=1)
    idx = np.zeros((n, MAX_INFLUENCES), dtype=np.int64)
    out = np.zeros((n, MAX_INFLUENCES))
    idx[:, :take] = order
    out[:, :take] = val
    s = out.sum(axis=1, keepdims=True)
    if np.any(s <= 0.0):
        raise WeightsMissing("weight row collapsed to zero during truncation")
    return idx, out / s


def build_weight_volume(template: BodyTemplate, shaped_vertices: np.ndarray,
                        resolution: tuple[int, int, int] = (64, 64, 64)) -> WeightVolume:
    """Inverse-distance blend of the k=8 nearest vertices' skin weights per voxel center."""
    gx, gy, gz = (int(g) for g in resolution)
    if min(gx, gy, gz) < 8:
        raise ValueError("weight volume resolution must be >= 8 per axis")
    shaped = np.asarray(shaped_vertices, dtype=np.float64)
    if shaped.shape[0] == 0:
        raise EmptyTemplate("cannot build a weight volume from an empty template")

    bmin = shaped.min(axis=0)
    bmax = shaped.max(axis=0)
    pad = BOUNDS_MARGIN * (bmax - bmin) + 1e-3
    bmin = bmin - pad
    bmax = bmax + pad

    cell = (bmax - bmin) / np.array([gx, gy, gz], dtype=np.float64)
    axes = [bmin[a] + (np.arange(g) + 0.5) * cell[a] for a, g in enumerate((gx, gy, gz))]
    cx, cy, cz = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)

    k = min(KNN_K, shaped.shape[0])
    tree = cKDTree(shaped)
    dist, nn = tree.query(centers, k=k)
    if k == 1:
        dist = dist[:, None]
        nn = nn[:, None]
    inv = 1.0 / np.maximum(dist, DISTANCE_FLOOR) ** KNN_POWER

    n_vox = centers.shape[0]
    dense = np.zeros((n_vox, template.joint_count))
    rows = np.repeat(np.arange(n_vox), k)
    for slot in range(MAX_INFLUENCES):
        j = template.skin_joint_idx[nn, slot].ravel()
        wv = (template.skin_weight_val[nn, slot] * inv).ravel()
        np.add.at(dense, (rows, j), wv)

    idx, val = _top4_renormalized(dense)
    return WeightVolume(
        resolution=(gx, gy, gz), bounds_min=bmin, bounds_max=bmax,
        weight_idx=idx.reshape(gx, gy, gz, MAX_INFLUENCES),
        weight_val=val.reshape(gx, gy, gz, MAX_INFLUENCES),
    )


def query_weights(volume: WeightVolume, anchors: AnchorTable, decoded: GaussianSet) -> GaussianSet:
    """Attach skinning weights: volume trilinear at mu for body, anchor weights for hand/face.

    Positions outside the volume clamp to the nearest in-bounds sample. The
    result is a new GaussianSet sharing geometry with `decoded`.
    """
    region = anchors.region
    known = np.isin(region, [REGION_BODY, REGION_HAND, REGION_FACE])
    if not known.all():
        raise RegionLabelMissing(f"unknown region label {int(region[~known][0])}")

    out_idx = anchors.weight_idx.astype(np.int64).copy()
    out_val = anchors.weight_val.copy()

    body = region == REGION_BODY
    if body.any():
        p = decoded.mu[body]
        gxyz = np.asarray(volume.resolution, dtype=np.float64)
        gc = (p - volume.bounds_min) / volume.cell_size - 0.5
        gc = np.clip(gc, 0.0, gxyz - 1.0)
        i0 = np.clip(np.floor(gc).astype(np.int64), 0, (gxyz - 2).astype(np.int64))
        frac = gc - i0

        nb = int(volume.weight_idx.max()) + 1
        dense = np.zeros((p.shape[0], nb))
        for corner in range(8):
            ox, oy, oz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = frac[:, 0] if ox else 1.0 - frac[:, 0]
            wy = frac[:, 1] if oy else 1.0 - frac[:, 1]
            wz = frac[:, 2] if oz else 1.0 - frac[:, 2]
            cw = wx * wy * wz
            vi = volume.weight_idx[i0[:, 0] + ox, i0[:, 1] + oy, i0[:, 2] + oz].astype(np.int64)
            vv = volume.weight_val[i0[:, 0] + ox, i0[:, 1] + oy, i0[:, 2] + oz].astype(np.float64)
            rows = np.repeat(np.arange(p.shape[0]), MAX_INFLUENCES)
            np.add.at(dense, (rows, vi.ravel()), (vv * cw[:, None]).ravel())
        bidx, bval = _top4_renormalized(dense)
        out_idx[body] = bidx
        out_val[body] = bval

    return GaussianSet(
        mu=decoded.mu, scale=decoded.scale, rot=decoded.rot,
        color=decoded.color, alpha=decoded.alpha,
        weight_idx=out_idx.astype(np.uint32), weight_val=out_val,
    )


def skin_gaussians(g: GaussianSet, transforms: JointTransforms) -> GaussianSet:
    """LBS forward skinning: blend the joint transforms, move means, rotate frames.

    The blended linear part is generally not orthonormal; it is applied to the
    rotation and then polar-projected back to the nearest rotation, with the
    worst-case orthonormality residual recorded on the result.
    """
    if len(g) == 0:
        return g
    wsum = g.weight_val.sum(axis=1)
    if np.any(wsum <= 0.0):
        raise WeightsMissing("skin_gaussians: a Gaussian has no joint weights attached")

    b_sel = transforms.B[g.weight_idx.astype(np.int64)]          # (N, 4, 4, 4)
    t = np.einsum("nk,nkij->nij", g.weight_val, b_sel)           # (N, 4, 4)

    mu_h = np.concatenate([g.mu, np.ones((len(g), 1))], axis=1)
    mu_posed = np.einsum("nij,nj->ni", t, mu_h)[:, :3]

    lin = t[:, :3, :3]
    gram = lin @ np.swapaxes(lin, 1, 2)
    residual = float(np.sqrt(((gram - np.eye(3)) ** 2).sum(axis=(1, 2))).max())

    rot_posed = quat.from_matrix(quat.nearest_rotation(lin @ quat.to_matrix(g.rot)))

    return GaussianSet(
        mu=mu_posed, scale=g.scale.copy(), rot=rot_posed,
        color=g.color.copy(), alpha=g.alpha.copy(),
        weight_idx=g.weight_idx.copy(), weight_val=g.weight_val.copy(),
        ortho_residual_max=residual,
    )


# ---------------------------------------------------------------------------
# optional volume cache

_RECORD = np.dtype([("idx", "<u2", (MAX_INFLUENCES,)), ("val", "<f4", (MAX_INFLUENCES,))])


def save_weight_volume(volume: WeightVolume, path) -> None:
    gx, gy, gz = volume.resolution
    records = np.zeros(gx * gy * gz, dtype=_RECORD)
    records["idx"] = volume.weight_idx.reshape(-1, MAX_INFLUENCES)
    records["val"] = volume.weight_val.reshape(-1, MAX_INFLUENCES)
    header = {
        "resolution": list(volume.resolution),
        "bounds": {"min": volume.bounds_min.tolist(), "max": volume.bounds_max.tolist()},
    }
    container.write(path, MAGIC, header, [("voxels", records)])


def load_weight_volume(path) -> WeightVolume:
    header, data = container.read(path, MAGIC)
    gx, gy, gz = (int(g) for g in header["resolution"])
    n = gx * gy * gz
    if len(data) < n * _RECORD.itemsize:
        from .errors import CountMismatch

        raise CountMismatch(f"{path}: voxel records truncated")
    records = np.frombuffer(data[: n * _RECORD.itemsize], dtype=_RECORD)
    return WeightVolume(
        resolution=(gx, gy, gz),
        bounds_min=np.asarray(header["bounds"]["min"], dtype=np.float64),
        bounds_max=np.asarray(header["bounds"]["max"], dtype=np.float64),
        weight_idx=records["idx"].reshape(gx, gy, gz, MAX_INFLUENCES).copy(),
        weight_val=records["val"].reshape(gx, gy, gz, MAX_INFLUENCES).copy(),
    )
