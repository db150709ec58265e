# app/encoding.py
"""
Bit-string encoding of cubic voxel neighborhoods.

A neighborhood of edge `size` (3 or 5, radius r = size // 2) becomes a key of
width size**3. Bit i holds the occupancy at offset (dx, dy, dz) with
i = (dz + r) * size**2 + (dy + r) * size + (dx + r), so the center bit is
(width - 1) / 2. Cells outside the grid read as 0.
"""
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations
from math import comb
from typing import FrozenSet, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from app.config import settings
from app.errors import InvalidInputError
from app.logger_config import logger
from app.voxel_grid import VoxelGrid

NBHD_SIZES = (3, 5)


def key_width(size: int) -> int:
    if size not in NBHD_SIZES:
        raise InvalidInputError(f"neighborhood size must be 3 or 5, got {size}")
    return size**3


def n_words(width: int) -> int:
    return -(-width // 64)


@dataclass(frozen=True)
class BitKey:
    width: int
    value: int

    def __post_init__(self):
        if self.width not in (27, 125):
            raise InvalidInputError(f"key width must be 27 or 125, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise InvalidInputError(f"value does not fit in {self.width} bits")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitKey":
        value = 0
        for i, bit in enumerate(bits):
            if bit:
                value |= 1 << i
        return cls(len(bits), value)

    @property
    def center(self) -> int:
        return (self.width - 1) // 2

    @property
    def words(self) -> Tuple[int, ...]:
        """The key as ceil(width / 64) unsigned 64-bit words, low word first."""
        mask = (1 << 64) - 1
        return tuple((self.value >> (64 * w)) & mask for w in range(n_words(self.width)))

    def bit(self, index: int) -> int:
        return (self.value >> index) & 1

    def popcount(self) -> int:
        return self.value.bit_count()

    def flip(self, *indices: int) -> "BitKey":
        value = self.value
        for i in indices:
            value ^= 1 << i
        return BitKey(self.width, value)

    def complement(self) -> "BitKey":
        return BitKey(self.width, self.value ^ ((1 << self.width) - 1))

    def __repr__(self):
        return f"BitKey({self.width}, 0b{self.value:0{self.width}b})"


def offset_index(dx: int, dy: int, dz: int, size: int = 3) -> int:
    r = size // 2
    return (dz + r) * size * size + (dy + r) * size + (dx + r)


def encode_neighborhood(grid: VoxelGrid, coord: Tuple[int, int, int], size: int = 3) -> BitKey:
    width = key_width(size)
    x, y, z = coord
    nx, ny, nz = grid.dims
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise InvalidInputError(f"coord {coord} lies outside grid {grid.dims}")
    r = size // 2
    padded = np.pad(grid.array[max(z - r, 0):z + r + 1, max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1],
                    ((max(r - z, 0), max(z + r + 1 - nz, 0)),
                     (max(r - y, 0), max(y + r + 1 - ny, 0)),
                     (max(r - x, 0), max(x + r + 1 - nx, 0))))
    packed = np.packbits(padded.ravel(), bitorder="little")
    return BitKey(width, int.from_bytes(packed.tobytes(), "little"))


def neighborhood_keys(array: np.ndarray, linear: np.ndarray, size: int = 3) -> np.ndarray:
    """
    Keys for many voxels at once. `array` is a [z, y, x] boolean volume and
    `linear` the raster indices of the voxels to encode. Returns an
    (n, ceil(width / 64)) uint64 array, low word first.
    """
    width = key_width(size)
    r = size // 2
    nz, ny, nx = array.shape
    padded = np.pad(np.asarray(array, dtype=bool), r).ravel()
    pny, pnx = ny + 2 * r, nx + 2 * r

    linear = np.asarray(linear, dtype=np.int64)
    z, rem = np.divmod(linear, ny * nx)
    y, x = np.divmod(rem, nx)
    base = (z * pny + y) * pnx + x

    words = np.zeros((linear.size, n_words(width)), dtype=np.uint64)
    i = 0
    for dz in range(size):
        for dy in range(size):
            for dx in range(size):
                bits = padded[base + (dz * pny + dy) * pnx + dx].astype(np.uint64)
                words[:, i // 64] |= bits << np.uint64(i % 64)
                i += 1
    return words


def keys_to_ints(words: np.ndarray) -> List[int]:
    if words.shape[1] == 1:
        return words[:, 0].tolist()
    value = [0] * words.shape[0]
    for w in range(words.shape[1] - 1, -1, -1):
        value = [(v << 64) | int(part) for v, part in zip(value, words[:, w].tolist())]
    return value


def hamming(k1: BitKey, k2: BitKey) -> int:
    if k1.width != k2.width:
        raise InvalidInputError(f"key width mismatch: {k1.width} vs {k2.width}")
    return (k1.value ^ k2.value).bit_count()


def ball_size(width: int, radius: int) -> int:
    return sum(comb(width, d) for d in range(1, radius + 1))


@lru_cache(maxsize=16)
def ball_masks(width: int, radius: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """
    XOR masks reaching every key at Hamming distance 1..radius, with their
    distances, in order of increasing distance.
    """
    if not 0 <= radius <= width:
        raise InvalidInputError(f"radius must lie in [0, {width}], got {radius}")
    size = ball_size(width, radius)
    if size > settings.ball_size_warning:
        logger.warning(
            f"Hamming ball of radius {radius} over {width} bits has {size} keys per entry; "
            f"index construction will be slow and memory hungry"
        )
    masks, distances = [], []
    for d in range(1, radius + 1):
        for bits in combinations(range(width), d):
            mask = 0
            for b in bits:
                mask |= 1 << b
            masks.append(mask)
            distances.append(d)
    return tuple(masks), tuple(distances)


def hamming_ball(key: BitKey, radius: int) -> FrozenSet[BitKey]:
    """Every key within `radius` flips of `key`, excluding `key` itself."""
    masks, _ = ball_masks(key.width, radius)
    return frozenset(BitKey(key.width, key.value ^ m) for m in masks)


@dataclass(frozen=True, eq=False)
class ActiveSet:
    """
    Voxels whose neighborhood holds at least one occupied voxel, in raster
    order (z, then y, then x), with their keys as uint64 words.
    """

    dims: Tuple[int, int, int]
    size: int
    linear: np.ndarray
    key_words: np.ndarray

    @property
    def width(self) -> int:
        return self.size**3

    def __len__(self):
        return int(self.linear.size)

    @cached_property
    def coords(self) -> np.ndarray:
        nx, ny, _ = self.dims
        z, rem = np.divmod(self.linear, nx * ny)
        y, x = np.divmod(rem, nx)
        return np.stack([x, y, z], axis=1)

    @cached_property
    def key_ints(self) -> List[int]:
        return keys_to_ints(self.key_words)

    @property
    def keys(self) -> List[BitKey]:
        return [BitKey(self.width, v) for v in self.key_ints]


def active_mask(array: np.ndarray, size: int = 3) -> np.ndarray:
    return ndimage.binary_dilation(array, structure=np.ones((size,) * 3, dtype=bool))


def active_voxels(grid: VoxelGrid, size: int = 3) -> ActiveSet:
    key_width(size)
    linear = np.flatnonzero(active_mask(grid.array, size))
    return ActiveSet(grid.dims, size, linear, neighborhood_keys(grid.array, linear, size))
