"""UV anchor sampling and decoding of Gaussian attribute maps into primitives.

Every valid texel of the UV atlas anchors exactly one Gaussian on the template
surface. The anchor stores the surface point, a texel-footprint scale, the
tangent-frame rotation and template-interpolated joint weights; the attribute
maps store offsets relative to those anchors:

    mu    = mu_hat + delta_mu                       (world-axis offset, meters)
    scale = s_hat  * exp(delta_s_log)               (componentwise)
    rot   = r_hat  ⊗ delta_r                        (local delta, renormalized)

plus per-texel color, opacity and a validity mask. Anchors are ordered
row-major by texel, so anchor index <-> valid texel index is a bijection and
editing one texel touches exactly one Gaussian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import container, quat
from .errors import CountMismatch, PlaneSizeMismatch, ResolutionMismatch
from .template import MAX_INFLUENCES, BodyTemplate

log = logging.getLogger(__name__)

MAGIC = b"GAM01\n"

# plane name -> channel count; listed in container order, mask stored as u8
PLANES = (
    ("delta_mu", 3),
    ("delta_s_log", 3),
    ("delta_r", 4),
    ("color", 3),
    ("opacity", 1),
    ("mask", 1),
)

# normal-axis anchor scale as a fraction of the smaller tangent footprint
NORMAL_SCALE_FRACTION = 0.1


@dataclass
class GaussianAttributeMaps:
    width: int
    height: int
    delta_mu: np.ndarray     # (H, W, 3) f32, meters
    delta_s_log: np.ndarray  # (H, W, 3) f32, log multiplicative scale
    delta_r: np.ndarray      # (H, W, 4) f32, unit quaternion on valid texels
    color: np.ndarray        # (H, W, 3) f32, linear RGB in [0, 1]
    opacity: np.ndarray      # (H, W) f32 in [0, 1]
    mask: np.ndarray         # (H, W) u8, 1 = valid texel
    clamp_count: int = field(default=0, compare=False)  # values clamped on load

    def __post_init__(self):
        h, w = self.height, self.width
        self.delta_mu = np.ascontiguousarray(self.delta_mu, dtype=np.float32).reshape(h, w, 3)
        self.delta_s_log = np.ascontiguousarray(self.delta_s_log, dtype=np.float32).reshape(h, w, 3)
        self.delta_r = np.ascontiguousarray(self.delta_r, dtype=np.float32).reshape(h, w, 4)
        self.color = np.ascontiguousarray(self.color, dtype=np.float32).reshape(h, w, 3)
        self.opacity = np.ascontiguousarray(self.opacity, dtype=np.float32).reshape(h, w)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8).reshape(h, w)

    def copy(self) -> "GaussianAttributeMaps":
        return GaussianAttributeMaps(
            self.width, self.height,
            self.delta_mu.copy(), self.delta_s_log.copy(), self.delta_r.copy(),
            self.color.copy(), self.opacity.copy(), self.mask.copy(),
        )

    def validate(self) -> None:
        from .errors import InvariantViolation

        valid = self.mask.astype(bool)
        if valid.any():
            norms = np.linalg.norm(self.delta_r[valid].astype(np.float64), axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-4:
                raise InvariantViolation("delta_r: not unit-norm within 1e-4 on valid texels")
        if self.color.min(initial=0.0) < 0.0 or self.color.max(initial=0.0) > 1.0:
            raise InvariantViolation("color: outside [0, 1]")
        if self.opacity.min(initial=0.0) < 0.0 or self.opacity.max(initial=0.0) > 1.0:
            raise InvariantViolation("opacity: outside [0, 1]")


@dataclass
class AnchorTable:
    width: int
    height: int
    texel_index: np.ndarray  # (N,) row-major linear texel index, strictly increasing
    tri_index: np.ndarray    # (N,)
    bary: np.ndarray         # (N, 3), sums to 1
    mu_hat: np.ndarray       # (N, 3) meters
    s_hat: np.ndarray        # (N, 3) meters
    r_hat: np.ndarray        # (N, 4) unit quaternions of the tangent frame
    region: np.ndarray       # (N,) u8 REGION_*
    weight_idx: np.ndarray   # (N, 4)
    weight_val: np.ndarray   # (N, 4), rows sum to 1
    degenerate_skipped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return self.texel_index.shape[0]

    def mask(self) -> np.ndarray:
        m = np.zeros(self.height * self.width, dtype=np.uint8)
        m[self.texel_index] = 1
        return m.reshape(self.height, self.width)


@dataclass
class GaussianSet:
    mu: np.ndarray      # (N, 3) meters
    scale: np.ndarray   # (N, 3) meters, > 0
    rot: np.ndarray     # (N, 4) unit quaternions
    color: np.ndarray   # (N, 3)
    alpha: np.ndarray   # (N,)
    weight_idx: np.ndarray  # (N, 4)
    weight_val: np.ndarray  # (N, 4)
    ortho_residual_max: float = field(default=0.0, compare=False)

    def __len__(self) -> int:
        return self.mu.shape[0]


# ---------------------------------------------------------------------------
# anchor construction

def build_anchor_table(template: BodyTemplate, shaped_vertices: np.ndarray,
                       uv_resolution: tuple[int, int]) -> AnchorTable:
    """Rasterize the UV atlas at texel centers and anchor one Gaussian per covered texel.

    Texel (ix, iy) samples UV ((ix+0.5)/W, (iy+0.5)/H). A texel claimed by
    several triangles resolves to the lowest triangle index. The tangent frame
    is (t = dP/du normalized, b = Gram-Schmidt of dP/dv, n = t x b) and the
    footprint scale is one texel step along u and v on the surface, with a
    thin normal axis at 10% of the smaller tangent step. Triangles with zero
    UV or world area are skipped and counted, not fatal.
    """
    w, h = int(uv_resolution[0]), int(uv_resolution[1])
    shaped = np.asarray(shaped_vertices, dtype=np.float64)
    if shaped.shape != (template.vertex_count, 3):
        raise ResolutionMismatch(
            f"shaped_vertices has shape {shaped.shape}, expected ({template.vertex_count}, 3)"
        )

    claimed = np.zeros((h, w), dtype=bool)
    out_tex, out_tri, out_bary = [], [], []
    out_mu, out_s, out_r, out_region = [], [], [], []
    out_widx, out_wval = [], []
    degenerate = 0

    n_b = template.joint_count
    for f in range(template.triangle_count):
        uv = template.uv_corners[f]
        e1 = uv[1] - uv[0]
        e2 = uv[2] - uv[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(det) < 1e-12:
            degenerate += 1
            continue
        p = shaped[template.triangles[f]]
        d1 = p[1] - p[0]
        d2 = p[2] - p[0]
        if np.linalg.norm(np.cross(d1, d2)) < 1e-14:
            degenerate += 1
            continue

        # candidate texel centers inside the UV bounding box
        umin, vmin = uv.min(axis=0)
        umax, vmax = uv.max(axis=0)
        ix0 = max(int(np.ceil(umin * w - 0.5)), 0)
        ix1 = min(int(np.floor(umax * w - 0.5)), w - 1)
        iy0 = max(int(np.ceil(vmin * h - 0.5)), 0)
        iy1 = min(int(np.floor(vmax * h - 0.5)), h - 1)
        if ix0 > ix1 or iy0 > iy1:
            continue
        ix = np.arange(ix0, ix1 + 1)
        iy = np.arange(iy0, iy1 + 1)
        gx, gy = np.meshgrid(ix, iy)
        cu = (gx + 0.5) / w
        cv = (gy + 0.5) / h

        # barycentrics from the 2x2 UV system
        ru = cu - uv[0, 0]
        rv = cv - uv[0, 1]
        inv = 1.0 / det
        b1 = (e2[1] * ru - e2[0] * rv) * inv
        b2 = (-e1[1] * ru + e1[0] * rv) * inv
        b0 = 1.0 - b1 - b2
        inside = (b0 >= -1e-12) & (b1 >= -1e-12) & (b2 >= -1e-12)
        free = inside & ~claimed[gy, gx]
        if not free.any():
            continue
        claimed[gy[free], gx[free]] = True

        bary = np.stack([b0[free], b1[free], b2[free]], axis=1)
        tex = gy[free].astype(np.int64) * w + gx[free].astype(np.int64)
        mu_hat = bary @ p

        # world-space UV derivatives for the frame and footprint
        dpdu = (e2[1] * d1 - e1[1] * d2) * inv
        dpdv = (-e2[0] * d1 + e1[0] * d2) * inv
        tangent = dpdu / np.linalg.norm(dpdu)
        bit = dpdv - np.dot(dpdv, tangent) * tangent
        nb_norm = np.linalg.norm(bit)
        if nb_norm < 1e-12:
            degenerate += 1
            claimed[gy[free], gx[free]] = False
            continue
        bit = bit / nb_norm
        normal = np.cross(tangent, bit)
        r_hat = quat.from_matrix(np.stack([tangent, bit, normal], axis=1))
        e_u = np.linalg.norm(dpdu) / w
        e_v = np.linalg.norm(dpdv) / h
        s_hat = np.array([e_u, e_v, NORMAL_SCALE_FRACTION * min(e_u, e_v)])

        # blend the triangle's vertex weights barycentrically, keep the top 4
        vidx = template.skin_joint_idx[template.triangles[f]]  # (3, 4)
        vval = template.skin_weight_val[template.triangles[f]]  # (3, 4)
        joints = np.unique(vidx)
        dense = np.zeros((3, joints.shape[0]))
        for corner in range(3):
            cols = np.searchsorted(joints, vidx[corner])
            np.add.at(dense[corner], cols, vval[corner])
        blended = bary @ dense  # (K, J)
        k = blended.shape[0]
        take = min(MAX_INFLUENCES, joints.shape[0])
        # stable sort on -weight keeps ascending joint order among ties
        order = np.argsort(-blended, axis=1, kind="stable")[:, :take]
        top_val = np.take_along_axis(blended, order, axis=1)
        top_idx = joints[order]
        wi = np.zeros((k, MAX_INFLUENCES), dtype=np.uint32)
        wv = np.zeros((k, MAX_INFLUENCES))
        wi[:, :take] = top_idx
        wv[:, :take] = top_val
        wv = wv / wv.sum(axis=1, keepdims=True)

        out_tex.append(tex)
        out_tri.append(np.full(k, f, dtype=np.int64))
        out_bary.append(bary)
        out_mu.append(mu_hat)
        out_s.append(np.tile(s_hat, (k, 1)))
        out_r.append(np.tile(r_hat, (k, 1)))
        out_region.append(np.full(k, template.region_labels[f], dtype=np.uint8))
        out_widx.append(wi)
        out_wval.append(wv)

    if degenerate:
        log.warning("build_anchor_table: skipped %d degenerate triangles", degenerate)

    if not out_tex:
        return AnchorTable(
            width=w, height=h,
            texel_index=np.zeros(0, dtype=np.int64),
            tri_index=np.zeros(0, dtype=np.int64),
            bary=np.zeros((0, 3)), mu_hat=np.zeros((0, 3)),
            s_hat=np.zeros((0, 3)), r_hat=np.zeros((0, 4)),
            region=np.zeros(0, dtype=np.uint8),
            weight_idx=np.zeros((0, MAX_INFLUENCES), dtype=np.uint32),
            weight_val=np.zeros((0, MAX_INFLUENCES)),
            degenerate_skipped=degenerate,
        )

    tex = np.concatenate(out_tex)
    order = np.argsort(tex, kind="stable")  # row-major anchor ordering
    return AnchorTable(
        width=w, height=h,
        texel_index=tex[order],
        tri_index=np.concatenate(out_tri)[order],
        bary=np.concatenate(out_bary)[order],
        mu_hat=np.concatenate(out_mu)[order],
        s_hat=np.concatenate(out_s)[order],
        r_hat=np.concatenate(out_r)[order],
        region=np.concatenate(out_region)[order],
        weight_idx=np.concatenate(out_widx)[order],
        weight_val=np.concatenate(out_wval)[order],
        degenerate_skipped=degenerate,
    )


# ---------------------------------------------------------------------------
# decoding

def decode_gaussians(anchors: AnchorTable, maps: GaussianAttributeMaps) -> GaussianSet:
    """Apply the attribute-map offsets to the anchors, one Gaussian per anchor."""
    if (maps.width, maps.height) != (anchors.width, anchors.height):
        raise ResolutionMismatch(
            f"maps are {maps.width}x{maps.height}, anchors were built at {anchors.width}x{anchors.height}"
        )
    tex = anchors.texel_index
    iy, ix = np.divmod(tex, anchors.width)
    mu = anchors.mu_hat + maps.delta_mu[iy, ix].astype(np.float64)
    scale = anchors.s_hat * np.exp(maps.delta_s_log[iy, ix].astype(np.float64))
    rot = quat.normalize(quat.mul(anchors.r_hat, maps.delta_r[iy, ix].astype(np.float64)))
    color = maps.color[iy, ix].astype(np.float64)
    alpha = maps.opacity[iy, ix].astype(np.float64)
    return GaussianSet(
        mu=mu, scale=scale, rot=rot, color=color, alpha=alpha,
        weight_idx=anchors.weight_idx.copy(), weight_val=anchors.weight_val.copy(),
    )


def default_maps(anchors: AnchorTable, base_color=(0.5, 0.5, 0.5)) -> GaussianAttributeMaps:
    """Neutral maps: zero offsets, identity rotation delta, uniform color, opacity 1."""
    h, w = anchors.height, anchors.width
    delta_r = np.zeros((h, w, 4), dtype=np.float32)
    delta_r[..., 0] = 1.0
    color = np.empty((h, w, 3), dtype=np.float32)
    color[:] = np.asarray(base_color, dtype=np.float32)
    return GaussianAttributeMaps(
        width=w, height=h,
        delta_mu=np.zeros((h, w, 3), dtype=np.float32),
        delta_s_log=np.zeros((h, w, 3), dtype=np.float32),
        delta_r=delta_r,
        color=color,
        opacity=np.ones((h, w), dtype=np.float32),
        mask=anchors.mask(),
    )


# ---------------------------------------------------------------------------
# container I/O

def save_maps(maps: GaussianAttributeMaps, path) -> None:
    header = {"width": maps.width, "height": maps.height, "planes": [n for n, _ in PLANES]}
    arrays = [
        ("delta_mu", maps.delta_mu.astype("<f4")),
        ("delta_s_log", maps.delta_s_log.astype("<f4")),
        ("delta_r", maps.delta_r.astype("<f4")),
        ("color", maps.color.astype("<f4")),
        ("opacity", maps.opacity.astype("<f4")),
        ("mask", maps.mask.astype("u1")),
    ]
    container.write(path, MAGIC, header, arrays)


def load_maps(path) -> GaussianAttributeMaps:
    """Load maps; normalizes off-unit delta_r rows, clamps color/opacity, counts clamps."""
    header, data = container.read(path, MAGIC)
    try:
        w, h = int(header["width"]), int(header["height"])
        names = list(header["planes"])
    except (KeyError, TypeError) as exc:
        raise CountMismatch(f"{path}: malformed header: {exc}") from exc
    if names != [n for n, _ in PLANES]:
        raise PlaneSizeMismatch(f"{path}: unexpected plane list {names}")

    cursor = 0
    raw = {}
    for name, channels in PLANES:
        dtype = np.dtype("u1" if name == "mask" else "<f4")
        nbytes = w * h * channels * dtype.itemsize
        if cursor + nbytes > len(data):
            raise PlaneSizeMismatch(f"{path}: plane '{name}' overruns file")
        raw[name] = np.frombuffer(data[cursor : cursor + nbytes], dtype=dtype).copy()
        cursor += nbytes + container._padding(nbytes)

    delta_r = raw["delta_r"].reshape(h, w, 4)
    norms = np.linalg.norm(delta_r.astype(np.float64), axis=-1)
    off = np.abs(norms - 1.0) > 1e-4
    zero = norms < 1e-8
    fix = off & ~zero
    if fix.any():
        delta_r[fix] = (delta_r[fix].astype(np.float64) / norms[fix][:, None]).astype(np.float32)
    if zero.any():
        delta_r[zero] = np.array([1, 0, 0, 0], dtype=np.float32)

    clamp_count = 0
    color = raw["color"].reshape(h, w, 3)
    opacity = raw["opacity"].reshape(h, w)
    for plane in (color, opacity):
        bad = (plane < 0.0) | (plane > 1.0)
        clamp_count += int(bad.sum())
        np.clip(plane, 0.0, 1.0, out=plane)

    maps = GaussianAttributeMaps(
        width=w, height=h,
        delta_mu=raw["delta_mu"].reshape(h, w, 3),
        delta_s_log=raw["delta_s_log"].reshape(h, w, 3),
        delta_r=delta_r,
        color=color,
        opacity=opacity,
        mask=raw["mask"].reshape(h, w),
        clamp_count=clamp_count,
    )
    maps.validate()
    return maps
