# app/synthesis.py
"""
Hierarchical synthesis: every active voxel of an upsampled coarse level is
replaced by the template's center voxel at the best-matching coordinate.

Levels are double-buffered: keys are read from the input level only and
results land in a fresh output, so splitting the queries across workers
cannot change the answer.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.encoding import active_mask, keys_to_ints, neighborhood_keys
from app.errors import InvalidInputError
from app.hash_index import HashIndex, build_index, fallback_bits
from app.kdtree_synthesis import build_kdtree_index, synthesize_level_kdtree_with_stats
from app.logger_config import logger
from app.schemas import LevelStats, SynthesisConfig
from app.tiling import partition, reassemble
from app.timing import measure_execution_time
from app.voxel_grid import VoxelGrid, downsample2x, upsample_interp

SOURCE_ACTUAL, SOURCE_NEIGHBOR, SOURCE_FALLBACK = 0, 1, 2

Upsampler = Callable[[VoxelGrid, int], VoxelGrid]


@dataclass(frozen=True)
class Pyramid:
    """Template levels from the coarsest (L0) to full resolution."""

    levels: Tuple[VoxelGrid, ...]

    def __getitem__(self, level: int) -> VoxelGrid:
        return self.levels[level]

    def __len__(self):
        return len(self.levels)


def build_pyramid(template_full: VoxelGrid, levels: int, cfg: SynthesisConfig) -> Pyramid:
    logger.info(f"Building {levels}-level template pyramid from {template_full.dims}")
    grids = [template_full]
    for _ in range(levels):
        grids.append(
            downsample2x(grids[-1], cfg.downsample_mode, cfg.gaussian_sigma, cfg.gaussian_radius)
        )
    return Pyramid(tuple(reversed(grids)))


@dataclass
class _ChunkResult:
    values: np.ndarray
    hits_actual: int
    hits_neighbor: int
    fallbacks: int


def _resolve_chunk(
    coarse: np.ndarray,
    linear: np.ndarray,
    counters: np.ndarray,
    index: HashIndex,
    template_flat: np.ndarray,
    cfg: SynthesisConfig,
) -> _ChunkResult:
    """
    Looks up the keys of the voxels at `linear`; identical keys are searched
    once. `counters` are the global raster indices feeding the random fallback.
    """
    if not linear.size:
        return _ChunkResult(np.zeros(0, dtype=np.uint8), 0, 0, 0)

    words = neighborhood_keys(coarse, linear, cfg.nbhd_size)
    uniq, inverse = np.unique(words, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    source = np.full(len(uniq), SOURCE_FALLBACK, dtype=np.int8)
    coord = np.zeros(len(uniq), dtype=np.int64)
    s_ta, s_tn = index.s_ta, index.s_tn
    neighbor_coord = index.tn_best if cfg.neighbor_match == "closest" else index.tn_first
    for i, key in enumerate(keys_to_ints(uniq)):
        group = s_ta.get(key)
        if group is not None:
            source[i] = SOURCE_ACTUAL
            coord[i] = index.ta_first[group]
            continue
        group = s_tn.get(key)
        if group is not None:
            source[i] = SOURCE_NEIGHBOR
            coord[i] = neighbor_coord[group]

    voxel_source = source[inverse]
    matched = voxel_source != SOURCE_FALLBACK
    values = np.empty(linear.size, dtype=np.uint8)
    values[matched] = template_flat[coord[inverse[matched]]]

    missed = ~matched
    if missed.any():
        if cfg.fallback == "random":
            values[missed] = fallback_bits(cfg.seed, counters[missed])
        elif cfg.fallback == "keep_coarse":
            values[missed] = coarse.ravel()[linear[missed]]
        else:
            majority = np.bitwise_count(uniq).sum(axis=1) > cfg.width / 2
            values[missed] = majority[inverse[missed]]

    return _ChunkResult(
        values,
        int(np.count_nonzero(voxel_source == SOURCE_ACTUAL)),
        int(np.count_nonzero(voxel_source == SOURCE_NEIGHBOR)),
        int(np.count_nonzero(missed)),
    )


def _synthesize_shared(
    coarse_up: VoxelGrid,
    template_flat: np.ndarray,
    index: HashIndex,
    cfg: SynthesisConfig,
    workers: int,
    counter_of: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[np.ndarray, _ChunkResult]:
    coarse = coarse_up.array
    active = np.flatnonzero(active_mask(coarse, cfg.nbhd_size))
    counters = counter_of(active) if counter_of else active

    chunks = np.array_split(np.arange(active.size), max(workers, 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda c: _resolve_chunk(coarse, active[c], counters[c], index, template_flat, cfg),
                chunks,
            ))
    else:
        results = [_resolve_chunk(coarse, active, counters, index, template_flat, cfg)]

    out = coarse.ravel().astype(np.uint8)
    out[active] = np.concatenate([r.values for r in results])
    total = _ChunkResult(
        np.zeros(0, dtype=np.uint8),
        sum(r.hits_actual for r in results),
        sum(r.hits_neighbor for r in results),
        sum(r.fallbacks for r in results),
    )
    return out.reshape(coarse.shape), total


def _level_stats(
    level: int,
    output: VoxelGrid,
    template_level: VoxelGrid,
    totals: _ChunkResult,
    indexes: Sequence[HashIndex],
    cfg: SynthesisConfig,
) -> LevelStats:
    queries = totals.hits_actual + totals.hits_neighbor + totals.fallbacks
    n_template_active = sum(int(ix.ta_coords.size) for ix in indexes)
    stats = LevelStats(
        level=level,
        dims=output.dims,
        backend="hash",
        keys_actual=sum(len(ix.s_ta) for ix in indexes),
        keys_neighbor=sum(len(ix.s_tn) for ix in indexes),
        queries=queries,
        hits_actual=totals.hits_actual,
        hits_neighbor=totals.hits_neighbor,
        fallbacks=totals.fallbacks,
        bytes_index=sum(ix.bytes_index() for ix in indexes),
        bytes_neighbor_keys=sum(ix.bytes_neighbor_keys() for ix in indexes),
        # the float64 feature matrix the kd-tree baseline would hold for the same active set
        bytes_features=n_template_active * min(cfg.pca_dims, cfg.width) * 8,
        d=min(cfg.pca_dims, cfg.width),
        mismatches_vs_template=int(np.bitwise_count(output.words ^ template_level.words).sum()),
    )
    if stats.hit_rate < settings.hit_rate_floor:
        logger.warning(
            f"Level {level}: hit rate {stats.hit_rate:.3f} below {settings.hit_rate_floor}; "
            f"{stats.fallbacks} voxels resolved by the {cfg.fallback} fallback"
        )
    return stats


def _check_level_inputs(coarse_up: VoxelGrid, template_level: VoxelGrid) -> None:
    if coarse_up.dims != template_level.dims:
        raise InvalidInputError(
            f"coarse level {coarse_up.dims} and template level {template_level.dims} differ"
        )


def _flat(grid: VoxelGrid) -> np.ndarray:
    return grid.array.ravel().astype(np.uint8)


def synthesize_partitioned(
    coarse_up: VoxelGrid,
    template_level: VoxelGrid,
    cfg: SynthesisConfig,
    level: int = 0,
    index: Optional[HashIndex] = None,
) -> Tuple[VoxelGrid, LevelStats]:
    """
    Splits the coarse level into cfg.workers subvolumes with a halo of one
    neighborhood radius and synthesizes each core.

    With `index` (built from the whole template level) every subvolume reads
    the one shared index, and the reassembled cores equal the serial result
    bit for bit. Without it each subvolume builds an index from its own
    template subvolume: deterministic, but it may differ from the serial
    result near subvolume borders.
    """
    _check_level_inputs(coarse_up, template_level)
    if index is not None:
        _check_index(index, template_level, cfg)
    halo = cfg.nbhd_size // 2
    coarse_parts = partition(coarse_up, cfg.workers, halo)
    template_parts = partition(template_level, cfg.workers, halo)
    nx, ny, _ = coarse_up.dims
    full_flat = _flat(template_level) if index is not None else None

    def run(pair):
        coarse_part, template_part = pair
        px, py, _ = coarse_part.grid.dims
        ox, oy, oz = coarse_part.read_offset

        def global_linear(local):
            z, rem = np.divmod(local, px * py)
            y, x = np.divmod(rem, px)
            return ((z + oz) * ny + (y + oy)) * nx + (x + ox)

        if index is None:
            part_index = build_index(template_part.grid, cfg)
            arr, totals = _synthesize_shared(
                coarse_part.grid, _flat(template_part.grid), part_index, cfg, 1, global_linear
            )
        else:
            # matched coordinates are raster indices of the whole template
            part_index = index
            arr, totals = _synthesize_shared(coarse_part.grid, full_flat, index, cfg, 1, global_linear)
        return VoxelGrid.from_array(arr, coarse_up.spacing), totals, part_index

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(run, zip(coarse_parts, template_parts)))

    output = reassemble(coarse_up.dims, template_level.spacing, coarse_parts, [r[0] for r in results])
    totals = _ChunkResult(
        np.zeros(0, dtype=np.uint8),
        sum(r[1].hits_actual for r in results),
        sum(r[1].hits_neighbor for r in results),
        sum(r[1].fallbacks for r in results),
    )
    indexes = [index] if index is not None else [r[2] for r in results]
    return output, _level_stats(level, output, template_level, totals, indexes, cfg)


def _check_index(index: HashIndex, template_level: VoxelGrid, cfg: SynthesisConfig) -> None:
    if index.width != cfg.width:
        raise InvalidInputError(f"index width {index.width} does not match config width {cfg.width}")
    if index.source_dims != template_level.dims:
        raise InvalidInputError(
            f"index was built for {index.source_dims}, template level is {template_level.dims}"
        )


@measure_execution_time
def synthesize_level_with_stats(
    coarse_up: VoxelGrid,
    template_level: VoxelGrid,
    index: Optional[HashIndex],
    cfg: SynthesisConfig,
    level: int = 0,
) -> Tuple[VoxelGrid, LevelStats]:
    """
    One synthesis pass; `index` must come from `template_level` with `cfg`.
    In partitioned mode a given `index` is shared by every subvolume, and
    None makes each subvolume build its own.
    """
    logger.info(
        f"Synthesizing level {level} at {coarse_up.dims} ({cfg.parallel}, {cfg.workers} workers)"
    )
    _check_level_inputs(coarse_up, template_level)
    if cfg.parallel == "partitioned":
        return synthesize_partitioned(coarse_up, template_level, cfg, level, index)

    if index is None:
        raise InvalidInputError("an index is required outside partitioned mode")
    _check_index(index, template_level, cfg)

    workers = cfg.workers if cfg.parallel == "shared" else 1
    arr, totals = _synthesize_shared(coarse_up, _flat(template_level), index, cfg, workers)
    output = VoxelGrid.from_array(arr, template_level.spacing)
    return output, _level_stats(level, output, template_level, totals, [index], cfg)


def synthesize_level(
    coarse_up: VoxelGrid, template_level: VoxelGrid, index: Optional[HashIndex], cfg: SynthesisConfig
) -> VoxelGrid:
    return synthesize_level_with_stats(coarse_up, template_level, index, cfg)[0]


def _default_upsampler(cfg: SynthesisConfig) -> Upsampler:
    return lambda grid, factor: upsample_interp(grid, factor, cfg.upsample_order)


def synthesize_hierarchical_with_stats(
    coarse_L0: VoxelGrid,
    template_full: VoxelGrid,
    cfg: SynthesisConfig,
    upsample: Optional[Upsampler] = None,
) -> Tuple[VoxelGrid, List[LevelStats]]:
    """
    Starting from the coarse level L0, each level is upsampled by two and
    refined against the matching template pyramid level with a fresh index.
    `upsample` replaces the interpolating upsampler (trilinear by default).
    With the interp backend L0 is upsampled by 2**levels in one cubic-spline
    step and no level stats are returned.
    """
    levels = cfg.levels
    expected = tuple(d * 2**levels for d in coarse_L0.dims)
    if template_full.dims != expected:
        raise InvalidInputError(
            f"dimension chain mismatch: coarse {coarse_L0.dims} x 2**{levels} = {expected}, "
            f"template is {template_full.dims}; pad with pad_to_pow2 first"
        )
    logger.info(f"Hierarchical synthesis {coarse_L0.dims} -> {template_full.dims} with the {cfg.backend} backend")
    if cfg.backend == "interp":
        up = upsample_interp(coarse_L0, 2**levels, "cubic-spline")
        return VoxelGrid(up.dims, template_full.spacing, up.words), []

    pyramid = build_pyramid(template_full, levels, cfg)
    upsample = upsample or _default_upsampler(cfg)

    current = coarse_L0
    all_stats = []
    for level in range(1, levels + 1):
        template_level = pyramid[level]
        up = upsample(current, 2)
        up = VoxelGrid(up.dims, template_level.spacing, up.words)
        if cfg.backend == "kdtree":
            kd_index = build_kdtree_index(template_level, cfg)
            current, stats = synthesize_level_kdtree_with_stats(up, template_level, kd_index, cfg, level)
        else:
            index = None if cfg.parallel == "partitioned" else build_index(template_level, cfg)
            current, stats = synthesize_level_with_stats(up, template_level, index, cfg, level)
        logger.info(f"Level {level}: hit rate {stats.hit_rate:.4f}, {stats.fallbacks} fallbacks")
        all_stats.append(stats)
    return current, all_stats


def synthesize_hierarchical(
    coarse_L0: VoxelGrid,
    template_full: VoxelGrid,
    cfg: SynthesisConfig,
    upsample: Optional[Upsampler] = None,
) -> VoxelGrid:
    return synthesize_hierarchical_with_stats(coarse_L0, template_full, cfg, upsample)[0]
