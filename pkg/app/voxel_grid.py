# app/voxel_grid.py
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Tuple, Union

import numpy as np
from scipy import ndimage

from app.config import settings
from app.errors import InvalidInputError
from app.logger_config import logger

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]

# Smoothed fields are compared against 0.5 with ties mapping to 1; the epsilon
# absorbs rounding in kernels whose weights sum to one.
THRESHOLD = 0.5
THRESHOLD_EPS = 1e-9


def _pack(bits: np.ndarray) -> np.ndarray:
    packed = np.packbits(bits.ravel(), bitorder="little")
    packed = np.pad(packed, (0, (-packed.size) % 8))
    return packed.view("<u8").astype(np.uint64)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """
    Binary occupancy grid stored one bit per voxel.

    Raster order is x-fastest, then y, then z; bit i of the stream lives in
    word i // 64 at bit position i % 64 (little-endian within the word).
    `dims` is (nx, ny, nz) and `spacing` is mm per voxel along (x, y, z).
    Array views returned by `array` are indexed [z, y, x].
    """

    dims: Dims
    spacing: Spacing
    words: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidInputError(f"dims must be three values >= 1, got {self.dims}")
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvalidInputError(f"spacing must be three values > 0, got {self.spacing}")
        n_words = -(-int(np.prod(dims, dtype=np.int64)) // 64)
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.shape != (n_words,):
            raise InvalidInputError(f"expected {n_words} words for dims {dims}, got {words.shape}")
        words.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "words", words)

    @classmethod
    def from_array(cls, array, spacing: Spacing = (1.0, 1.0, 1.0)) -> "VoxelGrid":
        """Builds a grid from a [z, y, x] array; any nonzero value becomes 1."""
        bits = np.asarray(array) != 0
        if bits.ndim != 3:
            raise InvalidInputError(f"expected a 3D array, got shape {bits.shape}")
        nz, ny, nx = bits.shape
        return cls((nx, ny, nz), spacing, _pack(bits))

    @classmethod
    def empty(cls, dims: Dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "VoxelGrid":
        n_words = -(-int(np.prod(dims, dtype=np.int64)) // 64)
        return cls(dims, spacing, np.zeros(n_words, dtype=np.uint64))

    @classmethod
    def full(cls, dims: Dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "VoxelGrid":
        nx, ny, nz = dims
        return cls.from_array(np.ones((nz, ny, nx), dtype=bool), spacing)

    @property
    def shape(self) -> Tuple[int, int, int]:
        nx, ny, nz = self.dims
        return nz, ny, nx

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @cached_property
    def array(self) -> np.ndarray:
        bits = np.unpackbits(
            self.words.astype("<u8").view(np.uint8), count=self.n_voxels, bitorder="little"
        )
        bits = bits.reshape(self.shape).astype(bool)
        bits.flags.writeable = False
        return bits

    def to_array(self) -> np.ndarray:
        """Writable [z, y, x] boolean copy."""
        return self.array.copy()

    def occupied_count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def vor(self) -> float:
        return self.occupied_count() / self.n_voxels

    def coords(self) -> np.ndarray:
        """Occupied voxels as an (n, 3) array of (x, y, z), raster order."""
        z, y, x = np.nonzero(self.array)
        return np.stack([x, y, z], axis=1)

    def get(self, x: int, y: int, z: int) -> int:
        return int(self.array[z, y, x])

    def with_array(self, array) -> "VoxelGrid":
        return VoxelGrid.from_array(array, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.words, other.words)
        )

    __hash__ = None

    def __repr__(self):
        return f"VoxelGrid(dims={self.dims}, spacing={self.spacing}, occupied={self.occupied_count()})"


def check_same_geometry(a: VoxelGrid, b: VoxelGrid, check_spacing: bool = True) -> None:
    if a.dims != b.dims:
        raise InvalidInputError(f"dims mismatch: {a.dims} vs {b.dims}")
    if check_spacing and not np.allclose(a.spacing, b.spacing, rtol=1e-9, atol=0):
        raise InvalidInputError(f"spacing mismatch: {a.spacing} vs {b.spacing}")


def _binarize(field: np.ndarray) -> np.ndarray:
    return field >= THRESHOLD - THRESHOLD_EPS


def _cube(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1,) * 3, dtype=bool)


def downsample2x(
    grid: VoxelGrid,
    smooth: Literal["gaussian", "mean"] = "gaussian",
    sigma: float = settings.gaussian_sigma,
    kernel_radius: int = settings.gaussian_radius,
) -> VoxelGrid:
    """
    One Gaussian-pyramid step: smooth, decimate by two, threshold at 0.5 with
    ties going to 1. `mean` averages each aligned 2x2x2 block instead.
    """
    if any(d % 2 for d in grid.dims):
        raise InvalidInputError(
            f"downsample2x needs even dims, got {grid.dims}; pad the grid first (pad_to_pow2)"
        )
    logger.debug(f"Downsampling {grid.dims} with {smooth} smoothing")
    nz, ny, nx = grid.shape
    field = grid.array.astype(np.float64)
    if smooth == "mean":
        reduced = field.reshape(nz // 2, 2, ny // 2, 2, nx // 2, 2).mean(axis=(1, 3, 5))
    elif smooth == "gaussian":
        blurred = ndimage.gaussian_filter(
            field, sigma=sigma, mode="nearest", truncate=kernel_radius / sigma
        )
        reduced = blurred[::2, ::2, ::2]
    else:
        raise InvalidInputError(f"unknown smoothing mode {smooth!r}")

    spacing = tuple(s * 2 for s in grid.spacing)
    return VoxelGrid.from_array(_binarize(reduced), spacing)


UPSAMPLE_ORDERS = {"nearest": 0, "trilinear": 1, "cubic-spline": 3}


def upsample_interp(
    grid: VoxelGrid,
    factor: int = 2,
    order: Literal["nearest", "trilinear", "cubic-spline"] = "cubic-spline",
) -> VoxelGrid:
    """Interpolating upsampler; the interpolated field is thresholded at 0.5."""
    if factor < 2 or factor & (factor - 1):
        raise InvalidInputError(f"factor must be a power of two >= 2, got {factor}")
    if order not in UPSAMPLE_ORDERS:
        raise InvalidInputError(f"unknown interpolation order {order!r}")

    spacing = tuple(s / factor for s in grid.spacing)
    if order == "nearest":
        arr = grid.array
        for axis in range(3):
            arr = np.repeat(arr, factor, axis=axis)
        return VoxelGrid.from_array(arr, spacing)

    if grid.occupied_count() == 0:
        nx, ny, nz = grid.dims
        return VoxelGrid.empty((nx * factor, ny * factor, nz * factor), spacing)

    field = ndimage.zoom(
        grid.array.astype(np.float64),
        factor,
        order=UPSAMPLE_ORDERS[order],
        mode="nearest",
        grid_mode=True,
    )
    return VoxelGrid.from_array(_binarize(field), spacing)


def pad_to_pow2(grid: VoxelGrid, levels: int) -> Tuple[VoxelGrid, Dims]:
    """Zero-pads the high end of each axis up to the next multiple of 2**levels."""
    if levels < 1:
        raise InvalidInputError(f"levels must be >= 1, got {levels}")
    multiple = 2**levels
    padded_dims = tuple(-(-d // multiple) * multiple for d in grid.dims)
    if padded_dims == grid.dims:
        return grid, grid.dims

    nx, ny, nz = grid.dims
    px, py, pz = padded_dims
    arr = np.pad(grid.array, ((0, pz - nz), (0, py - ny), (0, px - nx)))
    logger.debug(f"Padded {grid.dims} to {padded_dims}")
    return VoxelGrid.from_array(arr, grid.spacing), grid.dims


def crop(grid: VoxelGrid, dims: Dims) -> VoxelGrid:
    """Keeps the low corner of the grid; the inverse of pad_to_pow2."""
    if any(d > g for d, g in zip(dims, grid.dims)):
        raise InvalidInputError(f"cannot crop {grid.dims} to larger dims {dims}")
    if tuple(dims) == grid.dims:
        return grid
    nx, ny, nz = dims
    return VoxelGrid.from_array(grid.array[:nz, :ny, :nx], grid.spacing)


def subtract(complete: VoxelGrid, defective: VoxelGrid) -> VoxelGrid:
    """complete AND NOT defective, voxel-wise; used for implant extraction."""
    check_same_geometry(complete, defective)
    return VoxelGrid(complete.dims, complete.spacing, complete.words & ~defective.words)


def denoise(
    grid: VoxelGrid,
    keep: Union[Literal["largest_component"], int] = "largest_component",
    morph_radius: int = 0,
) -> VoxelGrid:
    """
    Drops 26-connected components failing `keep` (the largest component, or
    components of at least N voxels), then opens with a cube of half-width
    `morph_radius`. Equal-sized largest components resolve to the one whose
    first voxel comes first in raster order.
    """
    if morph_radius < 0:
        raise InvalidInputError(f"morph_radius must be >= 0, got {morph_radius}")
    if grid.occupied_count() == 0:
        return grid

    labels, n_components = ndimage.label(grid.array, structure=_cube(1))
    sizes = np.bincount(labels.ravel())[1:]
    if keep == "largest_component":
        kept = np.array([int(np.argmax(sizes)) + 1])
    elif isinstance(keep, int) and not isinstance(keep, bool) and keep >= 1:
        kept = np.flatnonzero(sizes >= keep) + 1
    else:
        raise InvalidInputError(f"keep must be 'largest_component' or a size >= 1, got {keep!r}")
    logger.info(f"Denoise: keeping {kept.size} of {n_components} components")

    arr = np.isin(labels, kept)
    if morph_radius > 0:
        arr = ndimage.binary_opening(arr, structure=_cube(morph_radius))
    return grid.with_array(arr)


def dilate(grid: VoxelGrid, radius: int = 1) -> VoxelGrid:
    if radius < 0:
        raise InvalidInputError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return grid
    return grid.with_array(ndimage.binary_dilation(grid.array, structure=_cube(radius)))
