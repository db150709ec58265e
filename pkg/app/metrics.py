# app/metrics.py
import numpy as np
from scipy import ndimage

from app.errors import InvalidInputError
from app.logger_config import logger
from app.voxel_grid import VoxelGrid, check_same_geometry


def dsc(a: VoxelGrid, b: VoxelGrid) -> float:
    """Dice coefficient 2|A and B| / (|A| + |B|); 1.0 when both grids are empty."""
    check_same_geometry(a, b, check_spacing=False)
    total = a.occupied_count() + b.occupied_count()
    if total == 0:
        return 1.0
    overlap = int(np.bitwise_count(a.words & b.words).sum())
    return 2.0 * overlap / total


def _directed_distances(source: VoxelGrid, target: VoxelGrid) -> np.ndarray:
    """Distance in mm from every occupied voxel of `source` to the nearest occupied voxel of `target`."""
    sx, sy, sz = target.spacing
    field = ndimage.distance_transform_edt(~target.array, sampling=(sz, sy, sx))
    return field[source.array]


def hausdorff(a: VoxelGrid, b: VoxelGrid, percentile: float = 100) -> float:
    """
    Symmetric Hausdorff distance in mm between the occupied voxels of two
    grids, from exact Euclidean distance transforms. With percentile < 100
    each directed distance set is reduced to that percentile before taking
    the larger of the two.
    """
    check_same_geometry(a, b)
    if not 0 < percentile <= 100:
        raise InvalidInputError(f"percentile must lie in (0, 100], got {percentile}")
    if a.occupied_count() == 0 or b.occupied_count() == 0:
        raise InvalidInputError("Hausdorff distance is undefined for an empty grid")

    d_ab = _directed_distances(a, b)
    d_ba = _directed_distances(b, a)
    if percentile == 100:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


def hausdorff_pair(a: VoxelGrid, b: VoxelGrid):
    """(hd, hd95), or (None, None) when either grid is empty."""
    if a.occupied_count() == 0 or b.occupied_count() == 0:
        logger.warning("Hausdorff distance skipped: one of the grids is empty")
        return None, None
    return hausdorff(a, b), hausdorff(a, b, 95)
