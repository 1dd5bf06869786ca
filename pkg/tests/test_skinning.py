import numpy as np
import pytest

from gsavatar import build_weight_volume, forward_kinematics, query_weights, skin_gaussians
from gsavatar import quat
from gsavatar.errors import EmptyTemplate, RegionLabelMissing, WeightsMissing
from gsavatar.skinning import DISTANCE_FLOOR, KNN_K, KNN_POWER, load_weight_volume, save_weight_volume
from gsavatar.template import (
    MAX_INFLUENCES,
    REGION_BODY,
    REGION_HAND,
    BodyTemplate,
    JointTransforms,
    Pose,
    identity_pose,
)
from gsavatar.uvgauss import AnchorTable, GaussianSet


def point_cloud_template(points, joint_of_point, n_joints):
    """Template made only of weighted vertices (no faces needed for volume tests)."""
    v = len(points)
    idx = np.zeros((v, 4), dtype=np.uint32)
    val = np.zeros((v, 4))
    idx[:, 0] = joint_of_point
    val[:, 0] = 1.0
    return BodyTemplate(
        vertices=np.asarray(points, dtype=np.float64),
        triangles=np.zeros((0, 3), dtype=np.uint32),
        uv_corners=np.zeros((0, 3, 2)),
        parents=np.array([-1] + [0] * (n_joints - 1), dtype=np.int32),
        rest_joints=np.zeros((n_joints, 3)),
        skin_joint_idx=idx,
        skin_weight_val=val,
        blendshapes=np.zeros((0, v, 3)),
        region_labels=np.zeros(0, dtype=np.uint8),
        joint_names=tuple(f"j{i}" for i in range(n_joints)),
    )


def knn_idw_oracle(template, shaped, point):
    """Brute-force k-NN inverse-distance weight blend over all vertices."""
    d = np.linalg.norm(shaped - point, axis=1)
    near = np.argsort(d, kind="stable")[: min(KNN_K, len(d))]
    inv = 1.0 / np.maximum(d[near], DISTANCE_FLOOR) ** KNN_POWER
    dense = np.zeros(template.joint_count)
    for vi, w in zip(near, inv):
        for slot in range(MAX_INFLUENCES):
            dense[template.skin_joint_idx[vi, slot]] += w * template.skin_weight_val[vi, slot]
    top = np.argsort(-dense, kind="stable")[:MAX_INFLUENCES]
    out = np.zeros(template.joint_count)
    out[top] = dense[top]
    return out / out.sum()


def dense_weights(idx, val, n_joints):
    out = np.zeros((len(idx), n_joints))
    rows = np.repeat(np.arange(len(idx)), idx.shape[1])
    np.add.at(out, (rows, idx.ravel()), val.ravel())
    return out


# ---------------------------------------------------------------------------
# volume construction

def test_voxel_at_vertex_dominated_by_distance_floor():
    # one vertex sits exactly at a voxel center; its 1/floor^2 weight dominates
    pts = [[0.0, 0.0, 0.0], [0.9, 0.9, 0.9], [-0.9, 0.9, -0.9], [0.9, -0.9, 0.9]]
    t = point_cloud_template(pts, [1, 0, 0, 0], 2)
    vol = build_weight_volume(t, t.vertices, (8, 8, 8))
    centers = [vol.voxel_centers_axis(a) for a in range(3)]
    # find the voxel whose center is nearest the origin and plant the vertex there
    i = [int(np.argmin(np.abs(c))) for c in centers]
    target = np.array([centers[0][i[0]], centers[1][i[1]], centers[2][i[2]]])
    pts[0] = target.tolist()
    t = point_cloud_template(pts, [1, 0, 0, 0], 2)
    vol = build_weight_volume(t, t.vertices, (8, 8, 8))
    w = dense_weights(
        vol.weight_idx[i[0], i[1], i[2]][None].astype(np.int64),
        vol.weight_val[i[0], i[1], i[2]][None].astype(np.float64), 2)[0]
    assert w[1] > 1.0 - 1e-3


def test_voxel_equidistant_two_vertices_with_oracle():
    rng = np.random.default_rng(7)
    # six distant vertices pin the volume bounds; pass 1 finds a voxel center,
    # pass 2 plants two single-joint vertices equidistant from it
    far = (rng.uniform(20.0, 25.0, (6, 3)) * np.sign(rng.normal(size=(6, 3)))).tolist()
    t = point_cloud_template([[0.1, 0, 0], [-0.1, 0, 0]] + far, [0, 1] + [2] * 6, 3)
    vol = build_weight_volume(t, t.vertices, (9, 9, 9))
    dists = [np.abs(vol.voxel_centers_axis(a)) for a in range(3)]
    i = tuple(int(np.argmin(d)) for d in dists)
    center = np.array([vol.voxel_centers_axis(a)[i[a]] for a in range(3)])

    near = [(center + [0.3, 0, 0]).tolist(), (center - [0.3, 0, 0]).tolist()]
    t = point_cloud_template(near + far, [0, 1] + [2] * 6, 3)
    vol = build_weight_volume(t, t.vertices, (9, 9, 9))
    got = dense_weights(
        vol.weight_idx[i][None].astype(np.int64),
        vol.weight_val[i][None].astype(np.float64), 3)[0]
    want = knn_idw_oracle(t, t.vertices, center)
    assert np.abs(got - want).max() < 5e-7
    assert abs(got[0] - 0.5) < 1e-3 and abs(got[1] - 0.5) < 1e-3


def test_volume_matches_oracle_random(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    rng = np.random.default_rng(13)
    for _ in range(20):
        i = tuple(int(rng.integers(0, 8)) for _ in range(3))
        center = np.array([vol.voxel_centers_axis(a)[i[a]] for a in range(3)])
        got = dense_weights(
            vol.weight_idx[i][None].astype(np.int64),
            vol.weight_val[i][None].astype(np.float64), toy.joint_count)[0]
        want = knn_idw_oracle(toy, toy.vertices, center)
        assert np.abs(got - want).max() < 1e-6


def test_constant_field():
    pts = np.random.default_rng(1).uniform(-1, 1, (30, 3))
    t = point_cloud_template(pts, [0] * 30, 3)
    vol = build_weight_volume(t, t.vertices, (8, 8, 8))
    dense = dense_weights(
        vol.weight_idx.reshape(-1, 4).astype(np.int64),
        vol.weight_val.reshape(-1, 4).astype(np.float64), 3)
    assert np.allclose(dense[:, 0], 1.0)


def test_volume_bounds_margin(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    lo, hi = toy.vertices.min(axis=0), toy.vertices.max(axis=0)
    ext = hi - lo
    assert np.all(vol.bounds_min <= lo - 0.05 * ext)
    assert np.all(vol.bounds_max >= hi + 0.05 * ext)


def test_volume_partition_of_unity(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    sums = vol.weight_val.sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-5


def test_volume_requires_vertices():
    t = point_cloud_template(np.zeros((0, 3)), [], 1)
    with pytest.raises(EmptyTemplate):
        build_weight_volume(t, t.vertices, (8, 8, 8))


def test_volume_deterministic(toy):
    a = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    b = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    assert np.array_equal(a.weight_idx, b.weight_idx)
    assert np.array_equal(a.weight_val, b.weight_val)


# ---------------------------------------------------------------------------
# weight queries

def _single_anchor_table(region, weights_idx, weights_val):
    return AnchorTable(
        width=1, height=1,
        texel_index=np.array([0]), tri_index=np.array([0]),
        bary=np.array([[1.0, 0.0, 0.0]]),
        mu_hat=np.zeros((1, 3)), s_hat=np.full((1, 3), 0.01),
        r_hat=np.array([[1.0, 0.0, 0.0, 0.0]]),
        region=np.array([region], dtype=np.uint8),
        weight_idx=np.asarray([weights_idx], dtype=np.uint32),
        weight_val=np.asarray([weights_val], dtype=np.float64),
    )


def _gaussian_at(p):
    return GaussianSet(
        mu=np.asarray([p], dtype=np.float64), scale=np.full((1, 3), 0.01),
        rot=np.array([[1.0, 0.0, 0.0, 0.0]]), color=np.full((1, 3), 0.5),
        alpha=np.ones(1), weight_idx=np.zeros((1, 4), dtype=np.uint32),
        weight_val=np.zeros((1, 4)),
    )


def test_hand_region_passthrough_bitwise(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    w_idx = [3, 4, 0, 0]
    w_val = [0.625, 0.375, 0.0, 0.0]
    anchors = _single_anchor_table(REGION_HAND, w_idx, w_val)
    out = query_weights(vol, anchors, _gaussian_at([0.05, 0.6, 0.0]))
    assert np.array_equal(out.weight_idx[0], np.asarray(w_idx, dtype=np.uint32))
    assert np.array_equal(out.weight_val[0], np.asarray(w_val))


def test_body_region_at_voxel_center(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    i = (4, 4, 4)
    center = np.array([vol.voxel_centers_axis(a)[i[a]] for a in range(3)])
    anchors = _single_anchor_table(REGION_BODY, [0, 0, 0, 0], [1.0, 0, 0, 0])
    out = query_weights(vol, anchors, _gaussian_at(center))
    got = dense_weights(out.weight_idx.astype(np.int64), out.weight_val, toy.joint_count)[0]
    want = dense_weights(vol.weight_idx[i][None].astype(np.int64),
                         vol.weight_val[i][None].astype(np.float64), toy.joint_count)[0]
    assert np.abs(got - want).max() < 1e-6


def test_body_region_midpoint_is_mean(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    ca = np.array([vol.voxel_centers_axis(d)[i] for d, i in zip(range(3), (3, 4, 4))])
    cb = np.array([vol.voxel_centers_axis(d)[i] for d, i in zip(range(3), (4, 4, 4))])
    anchors = _single_anchor_table(REGION_BODY, [0, 0, 0, 0], [1.0, 0, 0, 0])
    out = query_weights(vol, anchors, _gaussian_at(0.5 * (ca + cb)))
    got = dense_weights(out.weight_idx.astype(np.int64), out.weight_val, toy.joint_count)[0]
    wa = dense_weights(vol.weight_idx[3, 4, 4][None].astype(np.int64),
                       vol.weight_val[3, 4, 4][None].astype(np.float64), toy.joint_count)[0]
    wb = dense_weights(vol.weight_idx[4, 4, 4][None].astype(np.int64),
                       vol.weight_val[4, 4, 4][None].astype(np.float64), toy.joint_count)[0]
    want = 0.5 * (wa + wb)
    # direct trilinear formula; top-4 truncation may renormalize slightly
    want = want / want.sum()
    assert np.abs(got - want).max() < 1e-6


def test_out_of_bounds_query_clamps(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    anchors = _single_anchor_table(REGION_BODY, [0, 0, 0, 0], [1.0, 0, 0, 0])
    far = query_weights(vol, anchors, _gaussian_at([100.0, 100.0, 100.0]))
    corner = np.array([vol.voxel_centers_axis(a)[-1] for a in range(3)])
    at_corner = query_weights(vol, anchors, _gaussian_at(corner))
    assert np.array_equal(far.weight_idx, at_corner.weight_idx)
    assert np.allclose(far.weight_val, at_corner.weight_val)


def test_unknown_region_label(toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    anchors = _single_anchor_table(7, [0, 0, 0, 0], [1.0, 0, 0, 0])
    with pytest.raises(RegionLabelMissing):
        query_weights(vol, anchors, _gaussian_at([0, 0, 0]))


def test_query_partition_of_unity_end_to_end(toy, small_avatar):
    g = small_avatar.canonical_gaussians()
    assert np.abs(g.weight_val.sum(axis=1) - 1.0).max() < 1e-5


# ---------------------------------------------------------------------------
# LBS skinning

def _transforms(n, build):
    B = np.tile(np.eye(4), (n, 1, 1))
    build(B)
    return JointTransforms(B)


def test_skin_identity_fixpoint(small_avatar):
    g = small_avatar.canonical_gaussians()
    jt = forward_kinematics(small_avatar.template, identity_pose(small_avatar.template))
    posed = skin_gaussians(g, jt)
    assert np.abs(posed.mu - g.mu).max() < 1e-7
    assert np.abs(posed.scale - g.scale).max() < 1e-7
    assert np.abs(np.abs(np.sum(posed.rot * g.rot, axis=1)) - 1.0).max() < 1e-7


def test_skin_single_influence_translation():
    g = _gaussian_at([0.3, 0.2, 0.1])
    g.weight_idx[0] = [1, 0, 0, 0]
    g.weight_val[0] = [1.0, 0.0, 0.0, 0.0]
    jt = _transforms(2, lambda B: B.__setitem__((1, slice(0, 3), 3), [0.0, 1.0, 0.0]))
    posed = skin_gaussians(g, jt)
    assert np.allclose(posed.mu[0], [0.3, 1.2, 0.1], atol=1e-12)
    assert np.allclose(posed.rot[0], g.rot[0], atol=1e-9)


def test_skin_blend_of_translations():
    g = _gaussian_at([0.0, 0.0, 0.0])
    g.weight_idx[0] = [0, 1, 0, 0]
    g.weight_val[0] = [0.5, 0.5, 0.0, 0.0]
    jt = _transforms(2, lambda B: B.__setitem__((1, slice(0, 3), 3), [0.0, 0.0, 2.0]))
    posed = skin_gaussians(g, jt)
    assert np.allclose(posed.mu[0], [0.0, 0.0, 1.0], atol=1e-12)


def test_skin_rigid_equivariance(small_avatar):
    rng = np.random.default_rng(23)
    g = small_avatar.canonical_gaussians()
    q = quat.normalize(rng.normal(size=4))
    m = np.eye(4)
    m[:3, :3] = quat.to_matrix(q)
    m[:3, 3] = rng.normal(size=3)
    jt = JointTransforms(np.tile(m, (small_avatar.template.joint_count, 1, 1)))
    posed = skin_gaussians(g, jt)
    want_mu = g.mu @ m[:3, :3].T + m[:3, 3]
    assert np.abs(posed.mu - want_mu).max() < 1e-6
    want_rot = quat.mul(q, g.rot)
    dot = np.abs(np.sum(posed.rot * want_rot, axis=1))
    assert np.abs(dot - 1.0).max() < 1e-6
    # shared rotation across all joints: blended matrix stays orthonormal
    assert posed.ortho_residual_max < 1e-9


def test_skin_requires_weights():
    g = _gaussian_at([0, 0, 0])
    with pytest.raises(WeightsMissing):
        skin_gaussians(g, _transforms(2, lambda B: None))


def test_skin_preserves_scale_color_alpha(small_avatar):
    rng = np.random.default_rng(4)
    g = small_avatar.canonical_gaussians()
    rot = quat.normalize(rng.normal(size=(small_avatar.template.joint_count, 4)))
    jt = forward_kinematics(small_avatar.template, Pose(rng.normal(size=3), rot))
    posed = skin_gaussians(g, jt)
    assert np.array_equal(posed.scale, g.scale)
    assert np.array_equal(posed.color, g.color)
    assert np.array_equal(posed.alpha, g.alpha)
    norms = np.linalg.norm(posed.rot, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-9


# ---------------------------------------------------------------------------
# volume cache round trip

def test_wvol_roundtrip(tmp_path, toy):
    vol = build_weight_volume(toy, toy.vertices, (8, 8, 8))
    path = tmp_path / "toy.wvol"
    save_weight_volume(vol, path)
    loaded = load_weight_volume(path)
    assert loaded.resolution == vol.resolution
    assert np.allclose(loaded.bounds_min, vol.bounds_min)
    assert np.array_equal(loaded.weight_idx, vol.weight_idx)
    assert np.array_equal(loaded.weight_val, vol.weight_val)
