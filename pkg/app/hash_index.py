# app/hash_index.py
"""
Two-tier hash index over template neighborhood keys.

`s_ta` maps every actual key of the template's active voxels to the sorted
coordinates sharing it. `s_tn` maps every key within `radius` flips of an
actual key to the merged coordinates of all actual keys it was derived from.
Lookups check `s_ta`, then `s_tn`, then fall back.
"""
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from app.encoding import BitKey, active_voxels, ball_masks, keys_to_ints, n_words
from app.errors import InvalidInputError
from app.logger_config import logger
from app.schemas import SynthesisConfig
from app.timing import measure_execution_time
from app.voxel_grid import Dims, VoxelGrid

Coord = Tuple[int, int, int]


def _to_coord(linear: int, dims: Dims) -> Coord:
    nx, ny, _ = dims
    z, rem = divmod(int(linear), nx * ny)
    y, x = divmod(rem, nx)
    return x, y, z


@dataclass(frozen=True, eq=False)
class HashIndex:
    width: int
    radius: int
    source_dims: Dims
    s_ta: Dict[int, int]
    s_tn: Dict[int, int]
    # actual groups: coordinates (raster indices) of group g are
    # ta_coords[ta_offsets[g]:ta_offsets[g + 1]], ascending
    ta_offsets: np.ndarray
    ta_coords: np.ndarray
    # neighbor groups: source actual groups ordered by (distance, first coordinate)
    tn_offsets: np.ndarray
    tn_sources: np.ndarray
    tn_distances: np.ndarray
    # per group: first (smallest) coordinate; for neighbor groups that is the
    # first of the merged union, and tn_best is the smallest coordinate among
    # the closest source keys, at tn_best_distance
    ta_first: np.ndarray
    tn_first: np.ndarray
    tn_best: np.ndarray
    tn_best_distance: np.ndarray

    def neighbor_target(self, group: int, rule: str) -> int:
        """Raster index a neighbor-key match copies under `rule` (first or closest)."""
        return int(self.tn_best[group] if rule == "closest" else self.tn_first[group])

    def actual_coords(self, group: int) -> np.ndarray:
        return self.ta_coords[self.ta_offsets[group]:self.ta_offsets[group + 1]]

    def neighbor_coords(self, group: int) -> np.ndarray:
        sources = self.tn_sources[self.tn_offsets[group]:self.tn_offsets[group + 1]]
        return np.unique(np.concatenate([self.actual_coords(s) for s in sources]))

    def bytes_index(self) -> int:
        """Bit-packed actual keys plus their coordinate table."""
        return len(self.s_ta) * 8 * n_words(self.width) + int(self.ta_coords.nbytes)

    def bytes_neighbor_keys(self) -> int:
        return len(self.s_tn) * 8 * n_words(self.width)


@dataclass(frozen=True)
class MatchResult:
    source: Literal["actual", "neighbor", "fallback"]
    coords: Tuple[Coord, ...] = ()
    assigned_value: Optional[int] = None
    # coordinate copied by synthesis: coords[0], or with neighbor_match="closest"
    # the smallest coordinate of the closest source key
    best: Optional[Coord] = None
    distance: Optional[int] = None


def _empty_index(width: int, radius: int, dims: Dims) -> HashIndex:
    zeros = np.zeros(1, dtype=np.int64)
    nothing = np.zeros(0, dtype=np.int64)
    small = np.zeros(0, dtype=np.int8)
    return HashIndex(width, radius, dims, {}, {}, zeros, nothing, zeros, nothing, small, nothing, nothing, nothing, small)


def _mask_words(masks, words: int) -> np.ndarray:
    out = np.zeros((len(masks), words), dtype=np.uint64)
    low = (1 << 64) - 1
    for w in range(words):
        out[:, w] = [(m >> (64 * w)) & low for m in masks]
    return out


@measure_execution_time
def build_index(template_level: VoxelGrid, cfg: SynthesisConfig) -> HashIndex:
    """
    Indexes every active voxel of `template_level`. Voxels sharing a key share
    one s_ta entry; every Hamming-ball neighbor of every actual key gets one
    s_tn entry whose sources are merged, not duplicated.
    """
    width, radius = cfg.width, cfg.radius
    logger.info(f"Building hash index for template level {template_level.dims} (width {width}, radius {radius})")
    active = active_voxels(template_level, cfg.nbhd_size)
    if not len(active):
        return _empty_index(width, radius, template_level.dims)

    uniq, inverse = np.unique(active.key_words, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    ta_coords = active.linear[order]
    ta_offsets = np.concatenate([[0], np.cumsum(np.bincount(inverse, minlength=len(uniq)))])
    s_ta = dict(zip(keys_to_ints(uniq), range(len(uniq))))
    ta_first = ta_coords[ta_offsets[:-1]]

    masks, distances = ball_masks(width, radius)
    if masks:
        words = uniq.shape[1]
        mask_words = _mask_words(masks, words)
        neighbor_keys = (uniq[:, None, :] ^ mask_words[None, :, :]).reshape(-1, words)
        sources = np.repeat(np.arange(len(uniq), dtype=np.int64), len(masks))
        dist = np.tile(np.asarray(distances, dtype=np.int8), len(uniq))

        sort_keys = (ta_first[sources], dist) + tuple(neighbor_keys[:, w] for w in range(words))
        order = np.lexsort(sort_keys)
        neighbor_keys, sources, dist = neighbor_keys[order], sources[order], dist[order]
        starts = np.flatnonzero(
            np.concatenate([[True], np.any(neighbor_keys[1:] != neighbor_keys[:-1], axis=1)])
        )
        s_tn = dict(zip(keys_to_ints(neighbor_keys[starts]), range(len(starts))))
        tn_offsets = np.concatenate([starts, [len(sources)]])
    else:
        s_tn = {}
        sources = np.zeros(0, dtype=np.int64)
        dist = np.zeros(0, dtype=np.int8)
        tn_offsets = np.zeros(1, dtype=np.int64)

    group_starts = tn_offsets[:-1]
    if len(group_starts):
        tn_first = np.minimum.reduceat(ta_first[sources], group_starts)
    else:
        tn_first = np.zeros(0, dtype=np.int64)
    tn_best = ta_first[sources[tn_offsets[:-1]]]
    tn_best_distance = dist[tn_offsets[:-1]]
    index = HashIndex(
        width, radius, template_level.dims, s_ta, s_tn,
        ta_offsets, ta_coords, tn_offsets, sources, dist,
        ta_first, tn_first, tn_best, tn_best_distance,
    )
    logger.info(
        f"Hash index ready: {len(s_ta)} actual keys over {len(active)} active voxels, "
        f"{len(s_tn)} neighbor keys"
    )
    return index


def fallback_bits(seed: int, linear) -> np.ndarray:
    """
    Counter-based draws: one bit per voxel from a splitmix64 hash of
    seed XOR raster index, so the draw does not depend on visiting order.
    """
    x = np.atleast_1d(np.asarray(linear, dtype=np.int64)).astype(np.uint64) ^ np.uint64(seed)
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return (x & np.uint64(1)).astype(np.uint8)


def majority_bit(key_value: int, width: int) -> int:
    return int(key_value.bit_count() > width / 2)


def lookup(index: HashIndex, key: BitKey, cfg: SynthesisConfig, rng_state: int = 0) -> MatchResult:
    """
    Resolves one key: s_ta, then s_tn, then the fallback policy. `rng_state`
    is the raster index of the queried voxel, the counter of the random draw.
    `keep_coarse` leaves `assigned_value` unset for the caller to fill in.
    """
    if key.width != index.width:
        raise InvalidInputError(f"key width {key.width} does not match index width {index.width}")

    group = index.s_ta.get(key.value)
    if group is not None:
        coords = tuple(_to_coord(c, index.source_dims) for c in index.actual_coords(group))
        return MatchResult("actual", coords, best=coords[0], distance=0)

    group = index.s_tn.get(key.value)
    if group is not None:
        coords = tuple(_to_coord(c, index.source_dims) for c in index.neighbor_coords(group))
        best = _to_coord(index.neighbor_target(group, cfg.neighbor_match), index.source_dims)
        return MatchResult("neighbor", coords, best=best, distance=int(index.tn_best_distance[group]))

    if cfg.fallback == "random":
        value = int(fallback_bits(cfg.seed, rng_state)[0])
    elif cfg.fallback == "majority":
        value = majority_bit(key.value, key.width)
    else:
        value = None
    return MatchResult("fallback", assigned_value=value)
