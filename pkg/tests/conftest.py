import numpy as np
import pytest

from gsavatar import Avatar, Camera, make_toy_template
from gsavatar import quat
from gsavatar.uvgauss import GaussianSet


@pytest.fixture(scope="session")
def toy():
    return make_toy_template(6, 8, 0)


@pytest.fixture(scope="session")
def small_avatar(toy):
    # shared read-only avatar; tests that edit state must build their own
    return Avatar.build(toy, uv_resolution=48, volume_resolution=16)


@pytest.fixture()
def identity_cam():
    return Camera(80.0, 80.0, 32.0, 32.0, 64, 64, np.eye(4))


def random_gaussians(rng, n, depth=4.0, spread=1.0):
    mu = rng.uniform(-spread, spread, (n, 3))
    mu[:, 2] += depth
    scale = rng.uniform(0.01, 0.25, (n, 3))
    rot = quat.normalize(rng.normal(size=(n, 4)))
    color = rng.uniform(0.0, 1.0, (n, 3))
    alpha = rng.uniform(0.0, 1.0, n)
    w_idx = np.zeros((n, 4), dtype=np.uint32)
    w_val = np.zeros((n, 4))
    w_val[:, 0] = 1.0
    return GaussianSet(mu, scale, rot, color, alpha, w_idx, w_val)
