import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings as hypothesis_settings

from app.phantoms import make_phantom
from app.schemas import SynthesisConfig
from app.voxel_grid import VoxelGrid

hypothesis_settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
hypothesis_settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis_settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


def random_grid(rng: np.random.Generator, dims, p: float = 0.3, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    nx, ny, nz = dims
    return VoxelGrid.from_array(rng.random((nz, ny, nx)) < p, spacing)


def flip_surface(grid: VoxelGrid, rate: float, seed: int) -> VoxelGrid:
    """Flips a seeded fraction of the grid's occupied surface voxels to background."""
    from scipy import ndimage

    arr = grid.to_array()
    surface = arr & ~ndimage.binary_erosion(arr)
    rng = np.random.default_rng(seed)
    arr[surface & (rng.random(arr.shape) < rate)] = False
    return grid.with_array(arr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cfg():
    return SynthesisConfig(nbhd_size=3, radius=2, fallback="random", levels=2, seed=7)


@pytest.fixture(scope="session")
def shell_32():
    return make_phantom("sphere_shell", (32, 32, 32), {"r_in": 8, "r_out": 13})


@pytest.fixture(scope="session")
def shell_64():
    return make_phantom("sphere_shell", (64, 64, 64), {"r_in": 16, "r_out": 26})


@pytest.fixture(scope="session")
def shell_128():
    return make_phantom("sphere_shell", (128, 128, 128), {"r_in": 36, "r_out": 54})
