import numpy as np
import pytest

from splatpipe.cameras import Camera, build_camera_rig
from splatpipe.core import Scene, inverse_sigmoid, rgb_to_dc


def make_random_scene(
    n: int,
    seed: int,
    sh_degree: int = 0,
    spread: float = 1.0,
    scale_range=(-3.5, -1.5),
) -> Scene:
    rng = np.random.default_rng(seed)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, 3, k))
    sh[:, :, 0] = rng.normal(scale=0.5, size=(n, 3))
    if k > 1:
        sh[:, :, 1:] = rng.normal(scale=0.1, size=(n, 3, k - 1))
    return Scene(
        positions=rng.uniform(-spread, spread, (n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=rng.uniform(*scale_range, (n, 3)),
        opacity_logits=rng.normal(size=n),
        sh=sh,
        sh_degree=sh_degree,
    )


def make_sphere_scene(
    n: int,
    radius: float = 0.7,
    color=(0.6, 0.6, 0.6),
    opacity: float = 0.95,
    log_scale: float = -2.0,
    seed: int = 0,
) -> Scene:
    """Splats on a fibonacci sphere with uniform color."""
    i = np.arange(n)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    theta = golden * i
    positions = radius * np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    sh = np.zeros((n, 3, 1))
    sh[:, :, 0] = rgb_to_dc(np.asarray(color, dtype=np.float64))
    return Scene(
        positions=positions,
        rotations=quats,
        log_scales=np.full((n, 3), log_scale),
        opacity_logits=np.full(n, inverse_sigmoid(opacity)),
        sh=sh,
        sh_degree=0,
    )


@pytest.fixture
def small_camera() -> Camera:
    return Camera(azimuth_deg=30.0, elevation_deg=15.0, width=32, height=32)


@pytest.fixture
def small_rig():
    return build_camera_rig(4, [15.0, -15.0], 2.5, 49.0, (48, 48))
