import numpy as np
import pytest
from hypothesis import given, strategies as st

from app.errors import InvalidInputError
from app.voxel_grid import (
    VoxelGrid,
    crop,
    denoise,
    dilate,
    downsample2x,
    pad_to_pow2,
    subtract,
    upsample_interp,
)
from tests.conftest import random_grid


def _block(dims, lo, hi):
    nx, ny, nz = dims
    arr = np.zeros((nz, ny, nx), dtype=bool)
    arr[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]] = True
    return VoxelGrid.from_array(arr)


class TestVoxelGrid:
    def test_bit_layout_is_x_fastest_little_endian(self):
        arr = np.zeros((2, 2, 4), dtype=bool)  # nz=2, ny=2, nx=4
        arr[0, 0, 1] = True  # linear index 1
        arr[1, 1, 3] = True  # linear index 15
        grid = VoxelGrid.from_array(arr)
        assert grid.dims == (4, 2, 2)
        assert int(grid.words[0]) == (1 << 1) | (1 << 15)

    def test_counts_and_vor(self):
        grid = _block((8, 8, 8), (0, 0, 0), (2, 2, 2))
        assert grid.occupied_count() == 8
        assert grid.vor() == pytest.approx(8 / 512)

    def test_coords_are_xyz(self):
        arr = np.zeros((3, 4, 5), dtype=bool)
        arr[2, 1, 4] = True
        assert VoxelGrid.from_array(arr).coords().tolist() == [[4, 1, 2]]

    def test_array_view_is_read_only(self):
        grid = VoxelGrid.empty((2, 2, 2))
        with pytest.raises(ValueError):
            grid.array[0, 0, 0] = True

    def test_invalid_dims_and_spacing(self):
        with pytest.raises(InvalidInputError):
            VoxelGrid.empty((0, 2, 2))
        with pytest.raises(InvalidInputError):
            VoxelGrid.empty((2, 2, 2), spacing=(1.0, 0.0, 1.0))

    def test_equality_considers_spacing(self):
        assert VoxelGrid.empty((2, 2, 2)) == VoxelGrid.empty((2, 2, 2))
        assert VoxelGrid.empty((2, 2, 2)) != VoxelGrid.empty((2, 2, 2), spacing=(2.0, 1.0, 1.0))

    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_array_round_trip(self, nx, ny, nz, seed):
        rng = np.random.default_rng(seed)
        arr = rng.random((nz, ny, nx)) < 0.5
        grid = VoxelGrid.from_array(arr)
        assert np.array_equal(grid.array, arr)
        assert grid.occupied_count() == int(arr.sum())


class TestDownsample:
    def test_empty_and_full(self):
        assert downsample2x(VoxelGrid.empty((8, 8, 8))) == VoxelGrid.empty((4, 4, 4), (2.0, 2.0, 2.0))
        assert downsample2x(VoxelGrid.full((8, 8, 8))) == VoxelGrid.full((4, 4, 4), (2.0, 2.0, 2.0))

    def test_aligned_block_mean(self):
        grid = _block((8, 8, 8), (2, 4, 6), (4, 6, 8))
        out = downsample2x(grid, "mean")
        assert out.dims == (4, 4, 4)
        assert out.coords().tolist() == [[1, 2, 3]]

    def test_odd_dims_ask_for_padding(self):
        with pytest.raises(InvalidInputError, match="pad"):
            downsample2x(VoxelGrid.empty((8, 8, 7)))

    def test_mean_output_blocks_hold_half_or_more(self, rng):
        grid = random_grid(rng, (8, 8, 8), 0.5)
        out = downsample2x(grid, "mean")
        blocks = grid.array.reshape(4, 2, 4, 2, 4, 2).sum(axis=(1, 3, 5))
        assert np.all(blocks[out.array] >= 4)


class TestUpsample:
    @pytest.mark.parametrize("order", ["nearest", "trilinear", "cubic-spline"])
    def test_empty_and_full(self, order):
        assert upsample_interp(VoxelGrid.empty((4, 4, 4)), 2, order).occupied_count() == 0
        full = upsample_interp(VoxelGrid.full((4, 4, 4)), 2, order)
        assert full.dims == (8, 8, 8)
        assert full.occupied_count() == 512
        assert full.spacing == (0.5, 0.5, 0.5)

    def test_nearest_single_voxel(self):
        grid = _block((4, 4, 4), (1, 1, 1), (2, 2, 2))
        out = upsample_interp(grid, 2, "nearest")
        assert out.array[2:4, 2:4, 2:4].all()
        assert out.occupied_count() == 8

    def test_factor_must_be_power_of_two(self):
        with pytest.raises(InvalidInputError):
            upsample_interp(VoxelGrid.empty((2, 2, 2)), 3)


class TestPadCrop:
    def test_pad_199(self):
        grid = VoxelGrid.empty((16, 16, 199))
        padded, original = pad_to_pow2(grid, 2)
        assert padded.dims == (16, 16, 200)
        assert original == (16, 16, 199)

    def test_pad_noop(self):
        grid = VoxelGrid.full((16, 16, 200))
        padded, original = pad_to_pow2(grid, 2)
        assert padded is grid
        assert original == grid.dims

    def test_crop_inverts_pad(self, rng):
        grid = random_grid(rng, (5, 6, 7))
        padded, original = pad_to_pow2(grid, 3)
        assert padded.dims == (8, 8, 8)
        assert padded.occupied_count() == grid.occupied_count()
        assert crop(padded, original) == grid


class TestSubtract:
    def test_truth_table(self):
        complete = VoxelGrid.full((3, 3, 3))
        arr = np.ones((3, 3, 3), dtype=bool)
        arr[1, 1, 1] = False
        out = subtract(complete, complete.with_array(arr))
        assert out.coords().tolist() == [[1, 1, 1]]

    def test_identities(self, rng):
        a = random_grid(rng, (6, 6, 6))
        b = random_grid(rng, (6, 6, 6))
        empty = VoxelGrid.empty(a.dims)
        assert subtract(a, empty) == a
        assert subtract(a, a) == empty
        assert not (subtract(a, b).array & b.array).any()

    def test_dims_mismatch(self):
        with pytest.raises(InvalidInputError):
            subtract(VoxelGrid.empty((2, 2, 2)), VoxelGrid.empty((2, 2, 4)))


class TestDenoise:
    def test_largest_component_survives(self):
        arr = np.zeros((12, 12, 12), dtype=bool)
        arr[1:5, 1:6, 1:6] = True  # 100 voxels
        arr[10, 10, 10] = True
        out = denoise(VoxelGrid.from_array(arr))
        assert out.occupied_count() == 100
        assert not out.get(10, 10, 10)

    def test_single_component_unchanged(self):
        grid = _block((8, 8, 8), (1, 1, 1), (5, 5, 5))
        assert denoise(grid) == grid

    def test_min_size(self):
        arr = np.zeros((12, 12, 12), dtype=bool)
        arr[0:2, 0:2, 0:2] = True
        arr[8:11, 8:11, 8:11] = True
        arr[5, 0, 11] = True
        out = denoise(VoxelGrid.from_array(arr), keep=8)
        assert out.occupied_count() == 8 + 27

    def test_diagonal_neighbours_are_connected(self):
        arr = np.zeros((4, 4, 4), dtype=bool)
        arr[0, 0, 0] = arr[1, 1, 1] = True
        assert denoise(VoxelGrid.from_array(arr)).occupied_count() == 2

    def test_opening_removes_isolated_voxel(self):
        grid = _block((5, 5, 5), (2, 2, 2), (3, 3, 3))
        assert denoise(grid, morph_radius=1).occupied_count() == 0

    def test_idempotent(self, rng):
        grid = random_grid(rng, (10, 10, 10), 0.2)
        once = denoise(grid)
        assert denoise(once) == once

    def test_empty(self):
        assert denoise(VoxelGrid.empty((4, 4, 4))).occupied_count() == 0


def test_dilate_grows_by_cube():
    grid = _block((5, 5, 5), (2, 2, 2), (3, 3, 3))
    assert dilate(grid, 1).occupied_count() == 27
    assert dilate(grid, 0) == grid
