from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from app.encoding import (
    BitKey,
    active_voxels,
    ball_size,
    encode_neighborhood,
    hamming,
    hamming_ball,
    key_width,
    keys_to_ints,
    neighborhood_keys,
    offset_index,
)
from app.errors import InvalidInputError
from app.voxel_grid import VoxelGrid
from tests.conftest import random_grid

keys_27 = st.integers(0, 2**27 - 1).map(lambda v: BitKey(27, v))


def _single_voxel(dims, coord):
    nx, ny, nz = dims
    arr = np.zeros((nz, ny, nx), dtype=bool)
    x, y, z = coord
    arr[z, y, x] = True
    return VoxelGrid.from_array(arr)


class TestBitKey:
    def test_width_and_range_are_checked(self):
        with pytest.raises(InvalidInputError):
            BitKey(26, 0)
        with pytest.raises(InvalidInputError):
            BitKey(27, 1 << 27)

    def test_words_for_wide_keys(self):
        key = BitKey(125, (1 << 124) | 1)
        assert key.words == (1, 1 << 60)
        assert key.center == 62

    def test_from_bits_flip_and_complement(self):
        key = BitKey.from_bits([1, 0, 1] + [0] * 24)
        assert key.value == 0b101
        assert key.flip(0, 1).value == 0b110
        assert key.complement().popcount() == 25

    def test_offset_index(self):
        assert offset_index(0, 0, 0, 3) == 13
        assert offset_index(-1, -1, -1, 3) == 0
        assert offset_index(2, 2, 2, 5) == 124
        assert key_width(5) == 125
        with pytest.raises(InvalidInputError):
            key_width(4)


class TestEncodeNeighborhood:
    def test_empty_grid(self):
        assert encode_neighborhood(VoxelGrid.empty((8, 8, 8)), (3, 3, 3)).value == 0

    def test_full_grid_interior(self):
        key = encode_neighborhood(VoxelGrid.full((8, 8, 8)), (3, 3, 3))
        assert key.value == 2**27 - 1

    def test_full_grid_corner_is_zero_padded(self):
        key = encode_neighborhood(VoxelGrid.full((4, 4, 4)), (0, 0, 0))
        assert key.popcount() == 8
        assert key.bit(offset_index(-1, 0, 0)) == 0
        assert key.bit(offset_index(1, 1, 1)) == 1

    def test_single_voxel_sets_center_bit(self):
        grid = _single_voxel((16, 16, 16), (5, 5, 5))
        assert encode_neighborhood(grid, (5, 5, 5)).value == 1 << 13
        assert encode_neighborhood(grid, (4, 5, 5)).value == 1 << offset_index(1, 0, 0)

    def test_size_five(self):
        grid = _single_voxel((16, 16, 16), (5, 5, 5))
        key = encode_neighborhood(grid, (7, 3, 5), size=5)
        assert key.width == 125
        assert key.value == 1 << offset_index(-2, 2, 0, 5)

    def test_coord_outside_grid(self):
        with pytest.raises(InvalidInputError):
            encode_neighborhood(VoxelGrid.empty((4, 4, 4)), (4, 0, 0))

    def test_one_changed_cell_is_distance_one(self, rng):
        grid = random_grid(rng, (6, 6, 6), 0.5)
        arr = grid.to_array()
        arr[3, 2, 4] = ~arr[3, 2, 4]
        changed = grid.with_array(arr)
        assert hamming(encode_neighborhood(grid, (3, 3, 3)), encode_neighborhood(changed, (3, 3, 3))) == 1

    @pytest.mark.parametrize("size", [3, 5])
    def test_vectorised_keys_match(self, rng, size):
        grid = random_grid(rng, (7, 5, 6), 0.4)
        linear = np.arange(grid.n_voxels)
        values = keys_to_ints(neighborhood_keys(grid.array, linear, size))
        for i in range(0, grid.n_voxels, 7):
            z, rem = divmod(i, 35)
            y, x = divmod(rem, 7)
            assert values[i] == encode_neighborhood(grid, (x, y, z), size).value


class TestHamming:
    def test_examples(self):
        key = BitKey(27, 0b1011)
        assert hamming(key, key) == 0
        assert hamming(key, key.complement()) == 27
        assert hamming(key, key.flip(0, 13, 26)) == 3

    def test_width_mismatch(self):
        with pytest.raises(InvalidInputError):
            hamming(BitKey(27, 0), BitKey(125, 0))

    @given(keys_27, keys_27, keys_27)
    def test_is_a_metric(self, a, b, c):
        assert (hamming(a, b) == 0) == (a == b)
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        assert 0 <= hamming(a, b) <= 27


class TestHammingBall:
    def test_radius_zero(self):
        assert hamming_ball(BitKey(27, 5), 0) == frozenset()

    def test_radius_one_matches_single_flips(self):
        key = BitKey(27, 0b110)
        expected = {key.flip(i) for i in range(27)}
        assert hamming_ball(key, 1) == expected
        assert len(expected) == 27

    def test_radius_two_matches_pairwise_flips(self):
        key = BitKey(27, 0)
        expected = {key.flip(i) for i in range(27)} | {key.flip(i, j) for i, j in combinations(range(27), 2)}
        ball = hamming_ball(key, 2)
        assert ball == expected
        assert len(ball) == 378 == ball_size(27, 2)

    @given(keys_27, st.integers(0, 2))
    def test_members_lie_within_radius(self, key, radius):
        ball = hamming_ball(key, radius)
        assert len(ball) == ball_size(27, radius)
        assert key not in ball
        assert all(1 <= hamming(key, other) <= radius for other in ball)

    def test_radius_out_of_range(self):
        with pytest.raises(InvalidInputError):
            hamming_ball(BitKey(27, 0), 28)


class TestActiveVoxels:
    def test_empty_grid(self):
        assert len(active_voxels(VoxelGrid.empty((8, 8, 8)))) == 0

    def test_single_voxel_block(self):
        active = active_voxels(_single_voxel((16, 16, 16), (5, 5, 5)))
        assert len(active) == 27
        assert active.coords.min(axis=0).tolist() == [4, 4, 4]
        assert active.coords.max(axis=0).tolist() == [6, 6, 6]
        assert all(key.popcount() == 1 for key in active.keys)

    def test_full_grid(self):
        assert len(active_voxels(VoxelGrid.full((4, 4, 4)))) == 64

    def test_order_and_coverage(self, rng):
        grid = random_grid(rng, (10, 10, 10), 0.02)
        active = active_voxels(grid)
        assert np.all(np.diff(active.linear) > 0)
        assert set(map(tuple, grid.coords().tolist())) <= set(map(tuple, active.coords.tolist()))
        assert all(v != 0 for v in active.key_ints)

    def test_sparse_shell_is_mostly_inactive(self, shell_64):
        assert len(active_voxels(shell_64)) < shell_64.n_voxels / 2
