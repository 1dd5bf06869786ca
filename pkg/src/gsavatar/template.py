"""Parametric body template: .btpl container, shape blendshapes, forward kinematics.

A template bundles the canonical surface (mesh + per-corner UV atlas), the
kinematic tree, per-vertex skinning weights (up to 4 influences), linear shape
blendshapes and per-triangle region labels. Licensed body-model assets are not
redistributed; a deterministic procedural capsule-chain humanoid stands in for
them, and converting a real asset into a .btpl file is an extension point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container, quat
from .errors import CountMismatch, InvariantViolation, LengthMismatch

MAGIC = b"BTPL1\n"

REGION_BODY = 0
REGION_HAND = 1
REGION_FACE = 2
REGION_NAMES = {REGION_BODY: "body", REGION_HAND: "hand", REGION_FACE: "face"}

MAX_INFLUENCES = 4
# weight rows whose sum is off by more than this are rejected instead of renormalized
WEIGHT_RENORM_TOL = 1e-4

_BUFFER_ORDER = (
    "vertices",
    "triangles",
    "uv_corners",
    "parents",
    "rest_joints",
    "skin_joint_idx",
    "skin_weight_val",
    "blendshapes",
    "region_labels",
)


@dataclass
class BodyTemplate:
    vertices: np.ndarray        # (V, 3) canonical positions, meters
    triangles: np.ndarray       # (F, 3) vertex indices
    uv_corners: np.ndarray      # (F, 3, 2) per-corner UVs in [0, 1]^2
    parents: np.ndarray         # (n_b,) parent joint indices, root = -1
    rest_joints: np.ndarray     # (n_b, 3) rest joint positions, meters
    skin_joint_idx: np.ndarray  # (V, 4)
    skin_weight_val: np.ndarray # (V, 4), rows sum to 1
    blendshapes: np.ndarray     # (S, V, 3) displacement per unit coefficient
    region_labels: np.ndarray   # (F,) REGION_* per triangle
    joint_names: tuple[str, ...]
    _rest_transforms: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.uint32)
        self.uv_corners = np.ascontiguousarray(self.uv_corners, dtype=np.float64)
        self.parents = np.ascontiguousarray(self.parents, dtype=np.int32)
        self.rest_joints = np.ascontiguousarray(self.rest_joints, dtype=np.float64)
        self.skin_joint_idx = np.ascontiguousarray(self.skin_joint_idx, dtype=np.uint32)
        self.skin_weight_val = np.ascontiguousarray(self.skin_weight_val, dtype=np.float64)
        self.blendshapes = np.ascontiguousarray(self.blendshapes, dtype=np.float64)
        self.region_labels = np.ascontiguousarray(self.region_labels, dtype=np.uint8)
        self.joint_names = tuple(self.joint_names)
        for arr in (self.vertices, self.triangles, self.uv_corners, self.parents,
                    self.rest_joints, self.skin_joint_idx, self.skin_weight_val,
                    self.blendshapes, self.region_labels):
            arr.setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    @property
    def joint_count(self) -> int:
        return self.parents.shape[0]

    @property
    def shape_dim(self) -> int:
        return self.blendshapes.shape[0]

    def validate(self) -> None:
        """Check every template invariant; raises InvariantViolation naming the first failure."""
        v, f, nb = self.vertex_count, self.triangle_count, self.joint_count
        if self.triangles.size and self.triangles.max() >= v:
            raise InvariantViolation("triangles: vertex index out of range")
        if self.uv_corners.size and (self.uv_corners.min() < 0.0 or self.uv_corners.max() > 1.0):
            raise InvariantViolation("uv_corners: coordinate outside [0, 1]")
        roots = np.nonzero(self.parents < 0)[0]
        if len(roots) != 1:
            raise InvariantViolation(f"parents: expected exactly one root, found {len(roots)}")
        if np.any(self.parents >= nb):
            raise InvariantViolation("parents: index out of range")
        self.topological_order()  # raises on cycles
        if np.any(self.skin_weight_val < -1e-9):
            raise InvariantViolation("skin_weights: negative weight")
        sums = self.skin_weight_val.sum(axis=1)
        if v and np.max(np.abs(sums - 1.0)) > 1e-6:
            raise InvariantViolation("skin_weights: row sum not 1 within 1e-6")
        if np.any(self.skin_joint_idx >= nb):
            raise InvariantViolation("skin_weights: joint index out of range")
        if not np.all(np.isin(self.region_labels, list(REGION_NAMES))):
            raise InvariantViolation("region_labels: unknown label")
        if len(self.joint_names) != nb:
            raise InvariantViolation("joint_names: length mismatch")

    def topological_order(self) -> np.ndarray:
        """Joints ordered parents-first; raises InvariantViolation on cycles."""
        nb = self.joint_count
        order, placed = [], np.zeros(nb, dtype=bool)
        pending = list(range(nb))
        for _ in range(nb + 1):
            rest = []
            for j in pending:
                p = self.parents[j]
                if p < 0 or placed[p]:
                    order.append(j)
                    placed[j] = True
                else:
                    rest.append(j)
            if not rest:
                return np.asarray(order, dtype=np.int64)
            pending = rest
        raise InvariantViolation("parents: cycle in kinematic tree")

    def rest_transforms(self) -> np.ndarray:
        """World transforms of the rest pose, computed by the same FK walk as posed ones."""
        if self._rest_transforms is None:
            rot = quat.to_matrix(quat.identity(self.joint_count))
            self._rest_transforms = _world_transforms(self, rot)
        return self._rest_transforms


@dataclass
class ShapeParams:
    beta: np.ndarray  # (S,)

    def __post_init__(self):
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64).reshape(-1)


@dataclass
class Pose:
    root_translation: np.ndarray  # (3,) meters
    joint_rotations: np.ndarray   # (n_b, 4) unit quaternions (w, x, y, z), local

    def __post_init__(self):
        self.root_translation = np.ascontiguousarray(self.root_translation, dtype=np.float64).reshape(3)
        self.joint_rotations = np.ascontiguousarray(self.joint_rotations, dtype=np.float64).reshape(-1, 4)

    def validate(self) -> None:
        norms = np.linalg.norm(self.joint_rotations, axis=1)
        if np.max(np.abs(norms - 1.0), initial=0.0) > 1e-6:
            raise InvariantViolation("pose: quaternion not unit-norm within 1e-6")


def identity_pose(template: BodyTemplate) -> Pose:
    return Pose(np.zeros(3), quat.identity(template.joint_count))


@dataclass
class JointTransforms:
    B: np.ndarray  # (n_b, 4, 4) rest-relative rigid transforms

    def __post_init__(self):
        self.B = np.ascontiguousarray(self.B, dtype=np.float64)

    def validate(self) -> None:
        lin = self.B[:, :3, :3]
        resid = np.abs(lin @ np.swapaxes(lin, 1, 2) - np.eye(3)).max(initial=0.0)
        if resid > 1e-5:
            raise InvariantViolation("joint_transforms: linear part not orthonormal within 1e-5")
        if np.any(np.linalg.det(lin) <= 0.0):
            raise InvariantViolation("joint_transforms: determinant not +1")


def renormalize_weights(idx, val, tol: float = WEIGHT_RENORM_TOL):
    """Renormalize weight rows whose sum is within tol of 1; reject anything worse."""
    val = np.array(val, dtype=np.float64)
    sums = val.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise InvariantViolation(
            f"skin_weights: row {bad} sums to {sums[bad]:.6f}, outside 1±{tol}"
        )
    return idx, val / sums[:, None]


# ---------------------------------------------------------------------------
# container I/O

def save_template(template: BodyTemplate, path) -> None:
    template.validate()
    arrays = [
        ("vertices", template.vertices.astype("<f4")),
        ("triangles", template.triangles.astype("<u4")),
        ("uv_corners", template.uv_corners.astype("<f4")),
        ("parents", template.parents.astype("<i4")),
        ("rest_joints", template.rest_joints.astype("<f4")),
        ("skin_joint_idx", template.skin_joint_idx.astype("<u4")),
        ("skin_weight_val", template.skin_weight_val.astype("<f4")),
        ("blendshapes", template.blendshapes.astype("<f4")),
        ("region_labels", template.region_labels.astype("u1")),
    ]
    header = {
        "V": template.vertex_count,
        "F": template.triangle_count,
        "n_b": template.joint_count,
        "S": template.shape_dim,
        "joint_names": list(template.joint_names),
        "buffers": container.layout_buffers(arrays),
    }
    container.write(path, MAGIC, header, arrays)


def load_template(path) -> BodyTemplate:
    header, data = container.read(path, MAGIC)
    try:
        v, f, nb, s = int(header["V"]), int(header["F"]), int(header["n_b"]), int(header["S"])
        names = [str(n) for n in header["joint_names"]]
        table = {e["name"]: e for e in header["buffers"]}
    except (KeyError, TypeError) as exc:
        raise CountMismatch(f"{path}: malformed header: {exc}") from exc
    missing = [n for n in _BUFFER_ORDER if n not in table]
    if missing:
        raise CountMismatch(f"{path}: missing buffers {missing}")

    counts = {
        "vertices": v * 3,
        "triangles": f * 3,
        "uv_corners": f * 3 * 2,
        "parents": nb,
        "rest_joints": nb * 3,
        "skin_joint_idx": v * MAX_INFLUENCES,
        "skin_weight_val": v * MAX_INFLUENCES,
        "blendshapes": s * v * 3,
        "region_labels": f,
    }
    buf = {n: container.read_buffer(data, table[n], counts[n], f"{path}:{n}") for n in _BUFFER_ORDER}

    idx = buf["skin_joint_idx"].reshape(v, MAX_INFLUENCES)
    val = buf["skin_weight_val"].reshape(v, MAX_INFLUENCES)
    idx, val = renormalize_weights(idx, val)

    template = BodyTemplate(
        vertices=buf["vertices"].reshape(v, 3),
        triangles=buf["triangles"].reshape(f, 3),
        uv_corners=buf["uv_corners"].reshape(f, 3, 2),
        parents=buf["parents"],
        rest_joints=buf["rest_joints"].reshape(nb, 3),
        skin_joint_idx=idx,
        skin_weight_val=val,
        blendshapes=buf["blendshapes"].reshape(s, v, 3),
        region_labels=buf["region_labels"],
        joint_names=names,
    )
    template.validate()
    return template


# ---------------------------------------------------------------------------
# shape blendshapes

def apply_shape(template: BodyTemplate, beta: ShapeParams | np.ndarray) -> np.ndarray:
    """Shaped vertices = canonical vertices + sum_s beta_s * blendshape_s (exactly linear)."""
    b = beta.beta if isinstance(beta, ShapeParams) else np.asarray(beta, dtype=np.float64).reshape(-1)
    if b.shape[0] != template.shape_dim:
        raise LengthMismatch(f"beta has length {b.shape[0]}, template expects {template.shape_dim}")
    if template.shape_dim == 0:
        return template.vertices.copy()
    return template.vertices + np.einsum("s,svc->vc", b, template.blendshapes)


# ---------------------------------------------------------------------------
# forward kinematics

def _world_transforms(template: BodyTemplate, rot_mats: np.ndarray) -> np.ndarray:
    nb = template.joint_count
    offsets = template.rest_joints.copy()
    has_parent = template.parents >= 0
    offsets[has_parent] -= template.rest_joints[template.parents[has_parent]]
    world = np.zeros((nb, 4, 4))
    for j in template.topological_order():
        local = np.eye(4)
        local[:3, :3] = rot_mats[j]
        local[:3, 3] = offsets[j]
        p = template.parents[j]
        world[j] = local if p < 0 else world[p] @ local
    return world


def forward_kinematics(template: BodyTemplate, pose: Pose) -> JointTransforms:
    """Rest-relative joint transforms B_i = G_i(pose) @ G_i(rest)^-1, root translation added.

    An identity pose therefore yields B_i = I for every joint.
    """
    pose.validate()
    if pose.joint_rotations.shape[0] != template.joint_count:
        raise LengthMismatch(
            f"pose has {pose.joint_rotations.shape[0]} rotations, template has {template.joint_count} joints"
        )
    world = _world_transforms(template, quat.to_matrix(quat.normalize(pose.joint_rotations)))
    rest = template.rest_transforms()
    # rigid inverse of the rest transforms, composed analytically
    r_rest = rest[:, :3, :3]
    t_rest = rest[:, :3, 3]
    b = np.zeros_like(world)
    b[:, 3, 3] = 1.0
    b[:, :3, :3] = world[:, :3, :3] @ np.swapaxes(r_rest, 1, 2)
    b[:, :3, 3] = world[:, :3, 3] - np.einsum("nij,nj->ni", b[:, :3, :3], t_rest)
    b[:, :3, 3] += pose.root_translation
    return JointTransforms(b)


# ---------------------------------------------------------------------------
# procedural toy humanoid

def make_toy_template(joints: int, segments_per_bone: int, seed: int,
                      ring_vertices: int = 8) -> BodyTemplate:
    """Deterministic capsule-chain humanoid for tests and demos.

    A chain of `joints` joints runs along +y; every chain bone is an open tube
    of `segments_per_bone` * `ring_vertices` quads, and a tapered head capsule
    sits on the last joint. The UV atlas packs one island per bone (head
    included) on a near-square grid; islands fill 90% of their grid cell per
    axis, so UV coverage sits around 0.81 regardless of joint count. Skin
    weights blend linearly along each bone. The last chain bone is labeled
    "hand", the head capsule "face", everything else "body". Blendshape 0
    inflates radially from the chain axis, blendshape 1 stretches vertically.
    """
    if joints < 2:
        raise InvariantViolation("make_toy_template: joints must be >= 2")
    if segments_per_bone < 1:
        raise InvariantViolation("make_toy_template: segments_per_bone must be >= 1")
    rng = np.random.default_rng(seed)

    n_b = joints
    bone_len = 0.25
    head_len = 0.18
    base_radius = 0.07
    head_radius = 0.09
    rest_joints = np.zeros((n_b, 3))
    rest_joints[:, 1] = bone_len * np.arange(n_b)
    parents = np.arange(-1, n_b - 1, dtype=np.int32)

    n_chain = n_b - 1
    n_islands = n_chain + 1  # head capsule gets its own island
    cols = int(np.ceil(np.sqrt(n_islands)))
    rows = int(np.ceil(n_islands / cols))
    radii = base_radius * (1.0 + 0.3 * (rng.random(n_chain) - 0.5))

    # ring phase avoids mirror-symmetric vertex pairs sharing an exact depth
    theta = 2.0 * np.pi * (np.arange(ring_vertices) + 0.37) / ring_vertices

    verts, tris, uvs, labels = [], [], [], []
    widx, wval = [], []

    def island_rect(k: int):
        cx, cy = k % cols, k // cols
        w, h = 1.0 / cols, 1.0 / rows
        return (cx * w + 0.05 * w, cy * h + 0.05 * h, (cx + 1) * w - 0.05 * w, (cy + 1) * h - 0.05 * h)

    def add_tube(island: int, y0: float, y1: float, ring_radii: np.ndarray,
                 w_lo: tuple, w_hi: tuple, label: int):
        """Tube from y0 to y1; ring s gets radius ring_radii[s] and weights lerp(w_lo, w_hi)."""
        segs = segments_per_bone
        base = sum(len(v) for v in verts)
        u0, v0, u1, v1 = island_rect(island)
        vv, ww_i, ww_v = [], [], []
        for s in range(segs + 1):
            t = s / segs
            y = (1.0 - t) * y0 + t * y1
            r = ring_radii[s]
            ring = np.stack([r * np.sin(theta), np.full(ring_vertices, y), r * np.cos(theta)], axis=1)
            vv.append(ring)
            (j_lo, _), (j_hi, _) = w_lo, w_hi
            if j_lo == j_hi:
                ww_i.append(np.tile([j_lo, 0, 0, 0], (ring_vertices, 1)))
                ww_v.append(np.tile([1.0, 0.0, 0.0, 0.0], (ring_vertices, 1)))
            else:
                w = np.array([(1.0 - t), t])
                w = w / w.sum()
                ww_i.append(np.tile([j_lo, j_hi, 0, 0], (ring_vertices, 1)))
                ww_v.append(np.tile([w[0], w[1], 0.0, 0.0], (ring_vertices, 1)))
        verts.append(np.concatenate(vv, axis=0))
        widx.append(np.concatenate(ww_i, axis=0))
        wval.append(np.concatenate(ww_v, axis=0))

        for s in range(segs):
            for j in range(ring_vertices):
                jn = (j + 1) % ring_vertices
                a = base + s * ring_vertices + j
                b = base + s * ring_vertices + jn
                c = base + (s + 1) * ring_vertices + j
                d = base + (s + 1) * ring_vertices + jn
                tris.append((a, b, d))
                tris.append((a, d, c))
                # per-corner UVs; the wrap column uses u = 1 on the island's right edge
                ua = u0 + (u1 - u0) * (j / ring_vertices)
                ub = u0 + (u1 - u0) * ((j + 1) / ring_vertices)
                va = v0 + (v1 - v0) * (s / segs)
                vb = v0 + (v1 - v0) * ((s + 1) / segs)
                uvs.append(((ua, va), (ub, va), (ub, vb)))
                uvs.append(((ua, va), (ub, vb), (ua, vb)))
                labels.append(label)
                labels.append(label)

    for b in range(n_chain):
        label = REGION_HAND if b == n_chain - 1 else REGION_BODY
        ring_r = np.full(segments_per_bone + 1, radii[b])
        add_tube(b, rest_joints[b, 1], rest_joints[b + 1, 1],
                 ring_r, (b, 1.0), (b + 1, 1.0), label)

    # head capsule: tapered tube fully bound to the last joint
    t = np.arange(segments_per_bone + 1) / segments_per_bone
    head_r = head_radius * np.sqrt(np.maximum(1.0 - 0.96 * t * t, 0.0016))
    top = rest_joints[-1, 1]
    add_tube(n_islands - 1, top, top + head_len, head_r,
             (n_b - 1, 1.0), (n_b - 1, 1.0), REGION_FACE)

    vertices = np.concatenate(verts, axis=0)
    skin_idx = np.concatenate(widx, axis=0)
    skin_val = np.concatenate(wval, axis=0)
    skin_val = skin_val / skin_val.sum(axis=1, keepdims=True)

    # blendshape 0: radial inflate (2 cm per unit beta); blendshape 1: vertical stretch
    radial = vertices.copy()
    radial[:, 1] = 0.0
    norm = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(norm > 1e-9, radial / np.maximum(norm, 1e-9), 0.0)
    inflate = 0.02 * radial
    ymax = vertices[:, 1].max()
    stretch = np.zeros_like(vertices)
    stretch[:, 1] = 0.1 * vertices[:, 1] / ymax
    blendshapes = np.stack([inflate, stretch], axis=0)

    names = [f"joint_{i:02d}" for i in range(n_b)]
    template = BodyTemplate(
        vertices=vertices.astype(np.float32),
        triangles=np.asarray(tris, dtype=np.uint32),
        uv_corners=np.asarray(uvs, dtype=np.float32),
        parents=parents,
        rest_joints=rest_joints.astype(np.float32),
        skin_joint_idx=skin_idx.astype(np.uint32),
        skin_weight_val=skin_val,
        blendshapes=blendshapes.astype(np.float32),
        region_labels=np.asarray(labels, dtype=np.uint8),
        joint_names=names,
    )
    template.validate()
    return template
