# app/tiling.py
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from app.errors import InvalidInputError
from app.logger_config import logger
from app.voxel_grid import Dims, VoxelGrid

Offset = Tuple[int, int, int]


def _axis_starts(n: int, p: int) -> List[int]:
    starts = list(range(0, n - p + 1, p))
    if n % p:
        # trailing patch anchored at the far end, overlapping its predecessor
        starts.append(n - p)
    return starts


@dataclass(frozen=True)
class PatchLayout:
    """
    Patch corners (x, y, z) in feeding order: z-layers outermost, then y, then
    x. Regular non-overlapping patches come first; when an axis is not a
    multiple of the patch size, a final slab anchored at the far end is added.
    Stitching replays the same order, so later patches win in overlaps.
    """

    dims: Dims
    patch_dims: Dims
    offsets: Tuple[Offset, ...]

    @classmethod
    def for_volume(cls, dims: Dims, patch_dims: Dims) -> "PatchLayout":
        if any(p < 1 or p > n for p, n in zip(patch_dims, dims)):
            raise InvalidInputError(f"patch {patch_dims} does not fit in volume {dims}")
        xs, ys, zs = (_axis_starts(n, p) for n, p in zip(dims, patch_dims))
        offsets = tuple((x, y, z) for z in zs for y in ys for x in xs)
        return cls(tuple(dims), tuple(patch_dims), offsets)

    def __len__(self):
        return len(self.offsets)


def _patch_slices(offset: Offset, size: Sequence[int]):
    x, y, z = offset
    px, py, pz = size
    return slice(z, z + pz), slice(y, y + py), slice(x, x + px)


def tile_volume(grid: VoxelGrid, patch_dims: Dims) -> Tuple[PatchLayout, List[VoxelGrid]]:
    layout = PatchLayout.for_volume(grid.dims, patch_dims)
    logger.info(f"Tiling {grid.dims} into {len(layout)} patches of {patch_dims}")
    arr = grid.array
    patches = [
        VoxelGrid.from_array(arr[_patch_slices(offset, patch_dims)], grid.spacing)
        for offset in layout.offsets
    ]
    return layout, patches


def stitch_volume(layout: PatchLayout, patches: Sequence[VoxelGrid]) -> VoxelGrid:
    if len(patches) != len(layout.offsets):
        raise InvalidInputError(f"layout has {len(layout.offsets)} patches, got {len(patches)}")
    if not patches:
        raise InvalidInputError("cannot stitch an empty patch list")
    nx, ny, nz = layout.dims
    out = np.zeros((nz, ny, nx), dtype=bool)
    for i, (offset, patch) in enumerate(zip(layout.offsets, patches)):
        if patch.dims != layout.patch_dims:
            raise InvalidInputError(f"patch {i} has dims {patch.dims}, expected {layout.patch_dims}")
        out[_patch_slices(offset, layout.patch_dims)] = patch.array
    return VoxelGrid.from_array(out, patches[0].spacing)


@dataclass(frozen=True)
class Subvolume:
    """
    One worker's share of a partitioned grid. `grid` is the read region (core
    plus halo skirts clipped to the volume); `read_offset` is its corner in
    the full volume; the core is what gets written back.
    """

    grid: VoxelGrid
    read_offset: Offset
    core_offset: Offset
    core_dims: Dims

    def core_array(self, array: np.ndarray) -> np.ndarray:
        """Cuts the core out of an array shaped like `grid`."""
        local = tuple(c - r for c, r in zip(self.core_offset, self.read_offset))
        return array[_patch_slices(local, self.core_dims)]


SPLIT_AXES = {1: (), 2: (0,), 4: (0, 1), 8: (0, 1, 2)}


def partition(grid: VoxelGrid, P: int, halo: int) -> List[Subvolume]:
    """
    Binary splits along x, then y, then z into P cores, each read with `halo`
    voxels of overlap so every core voxel sees its complete neighborhood.
    """
    if P not in SPLIT_AXES:
        raise InvalidInputError(f"P must be one of {sorted(SPLIT_AXES)}, got {P}")
    if halo < 0:
        raise InvalidInputError(f"halo must be >= 0, got {halo}")

    ranges = []
    for axis, n in enumerate(grid.dims):
        if axis in SPLIT_AXES[P]:
            half = n // 2
            if min(half, n - half) < 2 * halo or half == 0:
                raise InvalidInputError(
                    f"axis {axis} of size {n} is too small to split with halo {halo}"
                )
            ranges.append([(0, half), (half, n)])
        else:
            ranges.append([(0, n)])

    arr = grid.array
    parts = []
    for z0, z1 in ranges[2]:
        for y0, y1 in ranges[1]:
            for x0, x1 in ranges[0]:
                lo = (max(x0 - halo, 0), max(y0 - halo, 0), max(z0 - halo, 0))
                hi = (
                    min(x1 + halo, grid.dims[0]),
                    min(y1 + halo, grid.dims[1]),
                    min(z1 + halo, grid.dims[2]),
                )
                read = arr[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]]
                parts.append(
                    Subvolume(
                        grid=VoxelGrid.from_array(read, grid.spacing),
                        read_offset=lo,
                        core_offset=(x0, y0, z0),
                        core_dims=(x1 - x0, y1 - y0, z1 - z0),
                    )
                )
    logger.debug(f"Partitioned {grid.dims} into {len(parts)} subvolumes with halo {halo}")
    return parts


def reassemble(dims: Dims, spacing, parts: Sequence[Subvolume], outputs: Sequence[VoxelGrid]) -> VoxelGrid:
    """Writes back only the core of each subvolume output."""
    if len(parts) != len(outputs):
        raise InvalidInputError(f"{len(parts)} subvolumes but {len(outputs)} outputs")
    nx, ny, nz = dims
    out = np.zeros((nz, ny, nx), dtype=bool)
    for part, result in zip(parts, outputs):
        if result.dims != part.grid.dims:
            raise InvalidInputError(f"output dims {result.dims} differ from read dims {part.grid.dims}")
        out[_patch_slices(part.core_offset, part.core_dims)] = part.core_array(result.array)
    return VoxelGrid.from_array(out, spacing)
