"""Quaternion and small rotation-matrix helpers.

Convention everywhere: scalar-first (w, x, y, z), Hamilton product, column
vectors, right-handed frames, so ``to_matrix(q) @ v`` rotates ``v``. All
functions broadcast over leading dimensions and compute in float64.
"""
from __future__ import annotations

import numpy as np


def identity(n: int | None = None) -> np.ndarray:
    if n is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    out = np.zeros((n, 4))
    out[:, 0] = 1.0
    return out


def normalize(q, eps: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, eps)


def conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def mul(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b (apply b first when used as rotations)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotate(q, v) -> np.ndarray:
    """Rotate vectors v by unit quaternions q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def from_matrix(m) -> np.ndarray:
    """Rotation matrix to unit quaternion, branch chosen per element for stability.

    Output sign is canonicalized to w >= 0.
    """
    m = np.asarray(m, dtype=np.float64)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]

    tw = 1.0 + m00 + m11 + m22
    tx = 1.0 + m00 - m11 - m22
    ty = 1.0 - m00 + m11 - m22
    tz = 1.0 - m00 - m11 + m22
    # the four pivots sum to 4, so the selected one is always >= 1
    safe = lambda t: np.sqrt(np.maximum(t, 1e-30))

    sw = safe(tw)
    qw = np.stack([0.5 * sw, (m21 - m12) / (2.0 * sw), (m02 - m20) / (2.0 * sw), (m10 - m01) / (2.0 * sw)], axis=-1)
    sx = safe(tx)
    qx = np.stack([(m21 - m12) / (2.0 * sx), 0.5 * sx, (m01 + m10) / (2.0 * sx), (m02 + m20) / (2.0 * sx)], axis=-1)
    sy = safe(ty)
    qy = np.stack([(m02 - m20) / (2.0 * sy), (m01 + m10) / (2.0 * sy), 0.5 * sy, (m12 + m21) / (2.0 * sy)], axis=-1)
    sz = safe(tz)
    qz = np.stack([(m10 - m01) / (2.0 * sz), (m02 + m20) / (2.0 * sz), (m12 + m21) / (2.0 * sz), 0.5 * sz], axis=-1)

    pivot = np.argmax(np.stack([tw, tx, ty, tz], axis=-1), axis=-1)
    cand = np.stack([qw, qx, qy, qz], axis=-2)
    q = np.take_along_axis(cand, pivot[..., None, None].repeat(4, axis=-1), axis=-2)[..., 0, :]
    q = np.where(q[..., :1] < 0.0, -q, q)
    return normalize(q)


def from_axis_angle(aa) -> np.ndarray:
    """Axis-angle vectors (direction = axis, norm = angle in radians) to quaternions."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle[..., 0] < 1e-12
    axis = np.where(small[..., None], 0.0, aa / np.where(angle == 0.0, 1.0, angle))
    q = np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)
    q[small] = np.array([1.0, 0.0, 0.0, 0.0])
    return q


def from_euler_xyz(angles) -> np.ndarray:
    """Intrinsic X-Y-Z Euler angles (radians) to quaternions: q = qx ⊗ qy ⊗ qz.

    This is the engine-wide Euler convention; UI layers must match it.
    """
    angles = np.asarray(angles, dtype=np.float64)
    hx, hy, hz = 0.5 * angles[..., 0], 0.5 * angles[..., 1], 0.5 * angles[..., 2]
    z = np.zeros_like(hx)
    qx = np.stack([np.cos(hx), np.sin(hx), z, z], axis=-1)
    qy = np.stack([np.cos(hy), z, np.sin(hy), z], axis=-1)
    qz = np.stack([np.cos(hz), z, z, np.sin(hz)], axis=-1)
    return mul(mul(qx, qy), qz)


def nearest_rotation(m) -> np.ndarray:
    """Polar projection of 3x3 matrices onto SO(3) via SVD, det +1 enforced."""
    m = np.asarray(m, dtype=np.float64)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    det = np.linalg.det(r)
    flip = det < 0.0
    if np.any(flip):
        u = u.copy()
        u[flip, :, -1] *= -1.0
        r = u @ vt
    return r
