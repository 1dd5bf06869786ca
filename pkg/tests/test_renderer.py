import numpy as np
import pytest

from gsavatar import (
    Camera,
    Intrinsics,
    brute_force_render,
    identity_pose,
    load_camera,
    make_rig,
    project,
    rasterize,
    render,
    save_camera,
)
from gsavatar import quat
from gsavatar.errors import InvariantViolation
from gsavatar.imageio import Image, load_png, save_png
from gsavatar.renderer import focal_mm_to_pixels, look_at, rig_azimuths_deg
from gsavatar.uvgauss import GaussianSet

from conftest import random_gaussians


def single_gaussian(mu, scale=0.05, alpha=1.0, color=(1.0, 0.0, 0.0)):
    return GaussianSet(
        mu=np.asarray([mu], dtype=np.float64),
        scale=np.full((1, 3), scale),
        rot=np.array([[1.0, 0.0, 0.0, 0.0]]),
        color=np.asarray([color], dtype=np.float64),
        alpha=np.asarray([alpha], dtype=np.float64),
        weight_idx=np.zeros((1, 4), dtype=np.uint32),
        weight_val=np.eye(1, 4),
    )


# ---------------------------------------------------------------------------
# projection

def test_project_on_axis(identity_cam):
    cam = Camera(100.0, 100.0, 32.0, 32.0, 64, 64, np.eye(4))
    sp = project(cam, single_gaussian([0.0, 0.0, 2.0]))
    assert np.allclose(sp.mean2d[0], [32.0, 32.0], atol=1e-12)
    assert np.isclose(sp.depth[0], 2.0)


def test_project_isotropic_cov_matches_jacobian():
    # on-axis isotropic Gaussian: cov2d = diag((fx s / z)^2 + 0.3, (fy s / z)^2 + 0.3)
    cam = Camera(100.0, 120.0, 32.0, 32.0, 64, 64, np.eye(4))
    s, z = 0.07, 3.0
    sp = project(cam, single_gaussian([0.0, 0.0, z], scale=s))
    want = np.diag([(100.0 * s / z) ** 2 + 0.3, (120.0 * s / z) ** 2 + 0.3])
    assert np.abs(sp.cov2d[0] - want).max() < 1e-4


def test_project_culls_behind_camera(identity_cam):
    rng = np.random.default_rng(2)
    g = random_gaussians(rng, 10)
    g.mu[3, 2] = -1.0
    g.mu[7, 2] = 0.005  # in front of origin but behind the near plane
    sp = project(identity_cam, g)
    assert len(sp) == 8
    assert sp.culled == 2
    assert np.array_equal(sp.source_index, [0, 1, 2, 4, 5, 6, 8, 9])


def test_project_rotation_changes_cov(identity_cam):
    g = single_gaussian([0.0, 0.0, 4.0])
    g.scale[0] = [0.3, 0.01, 0.01]
    a = project(identity_cam, g).cov2d[0]
    g.rot[0] = quat.from_axis_angle([0.0, 0.0, np.pi / 2])
    b = project(identity_cam, g).cov2d[0]
    assert np.isclose(a[0, 0], b[1, 1], rtol=1e-9)
    assert np.isclose(a[1, 1], b[0, 0], rtol=1e-9)


def test_cov2d_positive_definite(identity_cam):
    rng = np.random.default_rng(3)
    sp = project(identity_cam, random_gaussians(rng, 200))
    eig = np.linalg.eigvalsh(sp.cov2d)
    assert eig.min() > 0.0


# ---------------------------------------------------------------------------
# rasterization

def test_empty_scene_is_background(identity_cam):
    img = rasterize(project(identity_cam, random_gaussians(np.random.default_rng(0), 0)),
                    identity_cam, (0.2, 0.4, 0.6))
    assert np.allclose(img.data, [0.2, 0.4, 0.6], atol=1e-7)


def test_single_splat_alpha_clamp():
    # opaque splat centered exactly on a pixel center: the 0.99 clamp applies
    cam = Camera(100.0, 100.0, 32.0, 32.0, 64, 64, np.eye(4))
    g = single_gaussian([0.0, 0.0, 2.0], scale=0.2, alpha=1.0, color=(1.0, 0.0, 0.0))
    g.mu[0, :2] = [(32.5 - 32.0) * 2.0 / 100.0, (32.5 - 32.0) * 2.0 / 100.0]
    sp = project(cam, g)
    assert np.allclose(sp.mean2d[0], [32.5, 32.5], atol=1e-12)
    img = rasterize(sp, cam, (0.0, 0.0, 1.0))
    px = img.data[32, 32]
    assert np.isclose(px[0], 0.99, atol=1e-6)
    assert np.isclose(px[2], 0.01, atol=1e-6)


def test_oracle_equivalence_random_scenes(identity_cam):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(8):
        g = random_gaussians(rng, int(rng.integers(1, 400)))
        sp = project(identity_cam, g)
        bg = rng.uniform(0, 1, 3)
        a = rasterize(sp, identity_cam, bg)
        b = brute_force_render(sp, identity_cam, bg)
        worst = max(worst, float(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)).max()))
    assert worst <= 1e-5


def test_oracle_equivalence_disjoint_tiles(identity_cam):
    # splats far apart on screen land in different tiles
    g = single_gaussian([-1.0, -1.0, 4.0])
    g2 = single_gaussian([1.0, 1.0, 4.0], color=(0.0, 1.0, 0.0))
    merged = GaussianSet(
        mu=np.concatenate([g.mu, g2.mu]), scale=np.concatenate([g.scale, g2.scale]),
        rot=np.concatenate([g.rot, g2.rot]), color=np.concatenate([g.color, g2.color]),
        alpha=np.concatenate([g.alpha, g2.alpha]),
        weight_idx=np.concatenate([g.weight_idx, g2.weight_idx]),
        weight_val=np.concatenate([g.weight_val, g2.weight_val]),
    )
    sp = project(identity_cam, merged)
    a = rasterize(sp, identity_cam, (0, 0, 0))
    b = brute_force_render(sp, identity_cam, (0, 0, 0))
    assert np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)).max() <= 1e-6


def test_compositing_partition(identity_cam):
    # with all colors 1 and black background, C + T_final = 1 exactly partitions
    rng = np.random.default_rng(17)
    g = random_gaussians(rng, 300)
    g.color[:] = 1.0
    sp = project(identity_cam, g)
    img, t_final = rasterize(sp, identity_cam, (0.0, 0.0, 0.0), return_transmittance=True)
    total = img.data[..., 0].astype(np.float64) + t_final
    assert np.abs(total - 1.0).max() < 1e-6


def test_monotone_transmittance(identity_cam):
    # instrumented sequential walk: T never increases at any pixel
    rng = np.random.default_rng(19)
    g = random_gaussians(rng, 100)
    sp = project(identity_cam, g)
    order = np.argsort(sp.depth, kind="stable")
    h, w = identity_cam.height, identity_cam.width
    gy, gx = np.mgrid[0:h, 0:w]
    t = np.ones((h, w))
    for k in order:
        a, b, c = sp.cov2d[k, 0, 0], sp.cov2d[k, 0, 1], sp.cov2d[k, 1, 1]
        det = a * c - b * b
        dx = gx + 0.5 - sp.mean2d[k, 0]
        dy = gy + 0.5 - sp.mean2d[k, 1]
        power = -0.5 * (c * dx * dx + a * dy * dy - 2 * b * dx * dy) / det
        ap = np.minimum(sp.alpha[k] * np.exp(power), 0.99)
        ap = np.where(ap < 1.0 / 255.0, 0.0, ap)
        live = t >= 1e-4
        t_new = np.where(live, t * (1.0 - ap), t)
        assert np.all(t_new <= t + 1e-15)
        t = t_new


def test_depth_tie_respects_input_order():
    cam = Camera(100.0, 100.0, 32.0, 32.0, 64, 64, np.eye(4))
    g = single_gaussian([0.0, 0.0, 2.0], scale=0.2, alpha=0.8, color=(1.0, 0.0, 0.0))
    g2 = single_gaussian([0.0, 0.0, 2.0], scale=0.2, alpha=0.8, color=(0.0, 1.0, 0.0))
    merged = GaussianSet(
        mu=np.concatenate([g.mu, g2.mu]), scale=np.concatenate([g.scale, g2.scale]),
        rot=np.concatenate([g.rot, g2.rot]), color=np.concatenate([g.color, g2.color]),
        alpha=np.concatenate([g.alpha, g2.alpha]),
        weight_idx=np.concatenate([g.weight_idx, g2.weight_idx]),
        weight_val=np.concatenate([g.weight_val, g2.weight_val]),
    )
    sp = project(cam, merged)
    img = rasterize(sp, cam, (0, 0, 0))
    center = img.data[32, 32]
    assert center[0] > center[1] > 0.0  # red listed first, composited first


# ---------------------------------------------------------------------------
# full pipeline

def test_render_nonempty_silhouette(small_avatar):
    from gsavatar.renderer import auto_camera

    cam = auto_camera(small_avatar.shaped_vertices, 64, 64)
    img = render(small_avatar, identity_pose(small_avatar.template), cam, (0.0, 0.0, 0.0))
    assert img.data.max() > 0.1
    assert img.data.min() >= 0.0


def test_render_deterministic_bitwise(small_avatar):
    from gsavatar.renderer import auto_camera

    cam = auto_camera(small_avatar.shaped_vertices, 64, 64)
    a = render(small_avatar, identity_pose(small_avatar.template), cam)
    b = render(small_avatar, identity_pose(small_avatar.template), cam)
    assert np.array_equal(a.data, b.data)


def test_render_rigid_equivariance(small_avatar):
    # rotating the avatar's root 180° about +y equals orbiting the camera 180°
    from gsavatar.renderer import auto_camera
    from gsavatar.template import Pose

    t = small_avatar.template
    cam = auto_camera(small_avatar.shaped_vertices, 96, 96)
    rot = quat.identity(t.joint_count)
    rot[0] = np.array([0.0, 0.0, 1.0, 0.0])  # exact 180° about y
    img_scene = render(small_avatar, Pose(np.zeros(3), rot), cam)

    flip = np.eye(4)
    flip[0, 0] = -1.0
    flip[2, 2] = -1.0  # rotation by 180° about y, exact in floats
    cam2 = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                  cam.world_to_cam @ flip, cam.near)
    img_cam = render(small_avatar, identity_pose(t), cam2)
    diff = np.abs(img_scene.data.astype(np.float64) - img_cam.data.astype(np.float64)).max()
    assert diff <= 1e-4


# ---------------------------------------------------------------------------
# rigs and camera IO

def test_make_rig_24_views_15_degrees():
    az = rig_azimuths_deg(24)
    assert np.array_equal(np.diff(az), np.full(23, 15.0))
    intr = Intrinsics.from_focal_mm(50, 64, 64)
    rig = make_rig(24, 10.0, 2.0, (0.0, 0.5, 0.0), intr)
    assert len(rig) == 24
    for cam in rig:
        cam.validate()


def test_make_rig_72_views():
    assert len(make_rig(72, 0.0, 2.0, (0, 0, 0), Intrinsics.from_focal_mm(50, 64, 64))) == 72


def test_make_rig_single_view():
    rig = make_rig(1, 0.0, 2.0, (0.0, 0.0, 0.0), Intrinsics.from_focal_mm(50, 64, 64))
    center = -rig[0].world_to_cam[:3, :3].T @ rig[0].world_to_cam[:3, 3]
    assert np.allclose(center, [0.0, 0.0, 2.0], atol=1e-12)


def test_make_rig_four_view_circle():
    rig = make_rig(4, 0.0, 2.0, (0.0, 0.0, 0.0), Intrinsics.from_focal_mm(50, 64, 64))
    centers = [-c.world_to_cam[:3, :3].T @ c.world_to_cam[:3, 3] for c in rig]
    want = [[0, 0, 2], [2, 0, 0], [0, 0, -2], [-2, 0, 0]]
    for got, expect in zip(centers, want):
        assert np.allclose(got, expect, atol=1e-12)


def test_focal_helper():
    assert np.isclose(focal_mm_to_pixels(36.0, 640), 640.0)
    assert np.isclose(focal_mm_to_pixels(50.0, 512), 50.0 / 36.0 * 512)


def test_camera_json_roundtrip(tmp_path):
    intr = Intrinsics.from_focal_mm(42.0, 80, 60)
    cam = look_at([0.4, 1.0, 2.0], [0.0, 0.5, 0.0], intr)
    path = tmp_path / "a.cam.json"
    save_camera(cam, path)
    loaded = load_camera(path)
    assert np.allclose(loaded.world_to_cam, cam.world_to_cam)
    assert (loaded.fx, loaded.fy, loaded.width, loaded.height) == (cam.fx, cam.fy, 80, 60)


def test_camera_rejects_non_rigid():
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(InvariantViolation):
        Camera(50, 50, 32, 32, 64, 64, m).validate()


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    img = Image(rng.uniform(0, 1, (16, 24, 3)).astype(np.float32))
    path = tmp_path / "x.png"
    save_png(img, path)
    back = load_png(path)
    assert back.data.shape == (16, 24, 3)
    # 8-bit sRGB round trip is lossy but close in linear space
    assert np.abs(back.data - img.data).max() < 0.01
