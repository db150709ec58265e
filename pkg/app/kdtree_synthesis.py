# app/kdtree_synthesis.py
"""
Exact nearest-neighbor baseline: neighborhoods are projected to `d`
principal components and matched on a kd-tree. Exactness holds in the
projected space only; the projection can reorder Hamming neighbors.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from app.encoding import BitKey, active_mask, active_voxels, keys_to_ints, n_words, neighborhood_keys
from app.errors import InvalidInputError
from app.logger_config import logger
from app.schemas import LevelStats, SynthesisConfig
from app.timing import measure_execution_time
from app.voxel_grid import VoxelGrid

MAX_TREE_DIMS = 32
# distances within this band of the minimum count as ties
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12
TIE_PROBE = 8


@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray  # (width,)
    basis: np.ndarray  # (width, d), orthonormal columns
    d: int

    @property
    def width(self) -> int:
        return int(self.mean.size)


def key_bits(words: np.ndarray, width: int) -> np.ndarray:
    """Unpacks (n, words) uint64 keys into an (n, width) 0/1 matrix."""
    words = np.atleast_2d(words)
    bits = np.empty((words.shape[0], width), dtype=np.uint8)
    for i in range(width):
        bits[:, i] = (words[:, i // 64] >> np.uint64(i % 64)) & np.uint64(1)
    return bits


def pca_fit(features, d: int, weights: Optional[np.ndarray] = None) -> PCAModel:
    """
    Top-d principal directions of binary feature rows. `weights` are row
    multiplicities, so distinct keys can stand in for a whole active set.
    Each basis vector is signed so its largest-magnitude component is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"features must be a 2D matrix, got shape {X.shape}")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    n = float(w.sum())
    width = X.shape[1]
    if not 1 <= d <= width:
        raise InvalidInputError(f"d must lie in [1, {width}], got {d}")
    if n < d:
        raise InvalidInputError(f"need at least d={d} feature rows, got {n:g}")

    mean = (w[:, None] * X).sum(axis=0) / n
    centered = X - mean
    cov = (centered * w[:, None]).T @ centered / n
    if np.trace(cov) <= 1e-15:
        raise InvalidInputError("features have zero variance; PCA is undefined")

    eigvals, eigvecs = np.linalg.eigh(cov)
    basis = eigvecs[:, ::-1][:, :d].copy()
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(d)])
    basis *= np.where(signs == 0, 1.0, signs)
    logger.debug(f"PCA kept {d} of {width} components, explained variance {eigvals[::-1][:d].sum() / eigvals.sum():.4f}")
    return PCAModel(mean, basis, d)


def pca_project(model: PCAModel, key) -> np.ndarray:
    """(bits - mean) . basis for one BitKey or for rows of a 0/1 matrix."""
    if isinstance(key, BitKey):
        if key.width != model.width:
            raise InvalidInputError(f"key width {key.width} does not match model width {model.width}")
        bits = np.array([key.bit(i) for i in range(key.width)], dtype=np.float64)
    else:
        bits = np.asarray(key, dtype=np.float64)
        if bits.shape[-1] != model.width:
            raise InvalidInputError(f"feature width {bits.shape[-1]} does not match model width {model.width}")
    return (bits - model.mean) @ model.basis


def pca_reconstruct(model: PCAModel, projected: np.ndarray) -> np.ndarray:
    return model.mean + np.asarray(projected) @ model.basis.T


@dataclass(frozen=True, eq=False)
class KdTree:
    points: np.ndarray
    tree: cKDTree
    # template raster index carried by each point, when built for synthesis
    coords: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.points.shape[0])

    def query_many(self, queries, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact nearest point per query row; among equally distant points the
        smallest index wins.
        """
        Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if Q.shape[1] != self.points.shape[1]:
            raise InvalidInputError(f"query dims {Q.shape[1]} differ from tree dims {self.points.shape[1]}")
        n = len(self)
        k = min(TIE_PROBE, n)
        dist, idx = self.tree.query(Q, k=k, workers=workers)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]

        best_d = dist[:, 0]
        limit = best_d + TIE_RTOL * best_d + TIE_ATOL
        tied = dist <= limit[:, None]
        best = np.where(tied, idx, n).min(axis=1)
        if k < n:
            for row in np.flatnonzero(tied[:, -1]):
                best[row] = min(self.tree.query_ball_point(Q[row], limit[row]))
        exact = np.linalg.norm(self.points[best] - Q, axis=1)
        return best.astype(np.int64), exact


def kdtree_build(points, coords: Optional[np.ndarray] = None) -> KdTree:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 1:
        raise InvalidInputError("cannot build a kd-tree over zero points")
    if points.shape[1] > MAX_TREE_DIMS:
        raise InvalidInputError(f"kd-tree supports at most {MAX_TREE_DIMS} dims, got {points.shape[1]}")
    return KdTree(points, cKDTree(points), coords)


def kdtree_query(tree: KdTree, q) -> Tuple[int, float]:
    best, dist = tree.query_many(np.asarray(q, dtype=np.float64)[None, :])
    return int(best[0]), float(dist[0])


def linear_nns(template_keys: Sequence[BitKey], query: BitKey) -> Tuple[int, int]:
    """Brute-force Hamming scan; the first of equally close keys wins."""
    if not template_keys:
        raise InvalidInputError("linear_nns needs at least one template key")
    best_index, best_distance = -1, query.width + 1
    for i, key in enumerate(template_keys):
        if key.width != query.width:
            raise InvalidInputError(f"key width mismatch: {key.width} vs {query.width}")
        distance = (key.value ^ query.value).bit_count()
        if distance < best_distance:
            best_index, best_distance = i, distance
            if distance == 0:
                break
    return best_index, best_distance


@dataclass(frozen=True, eq=False)
class KdTreeIndex:
    """
    PCA model and tree over the distinct template keys, ordered by their
    first coordinate. `key_points` maps each key to its point so exact
    matches never depend on how the projection breaks distance-0 ties.
    """

    model: Optional[PCAModel]
    tree: Optional[KdTree]
    width: int
    n_active: int
    key_points: Dict[int, int]

    @property
    def keys_actual(self) -> int:
        return len(self.tree) if self.tree is not None else 0

    def bytes_features(self) -> int:
        return self.n_active * (self.model.d if self.model else 0) * 8

    def bytes_index(self) -> int:
        """Bit-packed storage the hash backend would need for the same active set."""
        return self.keys_actual * 8 * n_words(self.width) + self.n_active * 8


@measure_execution_time
def build_kdtree_index(template_level: VoxelGrid, cfg: SynthesisConfig) -> KdTreeIndex:
    logger.info(f"Building PCA kd-tree for template level {template_level.dims} (d={cfg.pca_dims})")
    active = active_voxels(template_level, cfg.nbhd_size)
    if not len(active):
        return KdTreeIndex(None, None, cfg.width, 0, {})

    uniq, first, counts = np.unique(active.key_words, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    uniq, first, counts = uniq[order], first[order], counts[order]

    features = key_bits(uniq, cfg.width)
    d = min(cfg.pca_dims, len(active))
    model = pca_fit(features, d, weights=counts)
    tree = kdtree_build(pca_project(model, features), coords=active.linear[first])
    key_points = dict(zip(keys_to_ints(uniq), range(len(uniq))))
    return KdTreeIndex(model, tree, cfg.width, len(active), key_points)


@measure_execution_time
def synthesize_level_kdtree_with_stats(
    coarse_up: VoxelGrid,
    template_level: VoxelGrid,
    kd_index: KdTreeIndex,
    cfg: SynthesisConfig,
    level: int = 0,
) -> Tuple[VoxelGrid, LevelStats]:
    """
    Same contract as the hash pass, but every query takes its exact nearest
    neighbor in projected space, so there is no fallback. Keys present in the
    template resolve to their own point first. An empty template yields
    background everywhere.
    """
    logger.info(f"Synthesizing level {level} at {coarse_up.dims} with the kd-tree backend")
    if coarse_up.dims != template_level.dims:
        raise InvalidInputError(
            f"coarse level {coarse_up.dims} and template level {template_level.dims} differ"
        )
    if kd_index.width != cfg.width:
        raise InvalidInputError(f"index width {kd_index.width} does not match config width {cfg.width}")

    coarse = coarse_up.array
    active = np.flatnonzero(active_mask(coarse, cfg.nbhd_size))
    out = coarse.ravel().astype(np.uint8)
    exact_hits = 0
    if active.size and kd_index.tree is not None:
        words = neighborhood_keys(coarse, active, cfg.nbhd_size)
        uniq, inverse = np.unique(words, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)

        best = np.array([kd_index.key_points.get(k, -1) for k in keys_to_ints(uniq)], dtype=np.int64)
        exact = best >= 0
        if not exact.all():
            projected = pca_project(kd_index.model, key_bits(uniq[~exact], cfg.width))
            best[~exact], _ = kd_index.tree.query_many(projected, workers=cfg.workers)

        template_flat = template_level.array.ravel().astype(np.uint8)
        out[active] = template_flat[kd_index.tree.coords[best]][inverse]
        exact_hits = int(np.count_nonzero(exact[inverse]))
    elif active.size:
        out[active] = 0

    output = VoxelGrid.from_array(out.reshape(coarse.shape), template_level.spacing)
    stats = LevelStats(
        level=level,
        dims=output.dims,
        backend="kdtree",
        keys_actual=kd_index.keys_actual,
        queries=int(active.size),
        hits_actual=exact_hits,
        hits_neighbor=int(active.size) - exact_hits,
        fallbacks=0,
        bytes_index=kd_index.bytes_index(),
        bytes_features=kd_index.bytes_features(),
        d=kd_index.model.d if kd_index.model else 0,
        mismatches_vs_template=int(np.bitwise_count(output.words ^ template_level.words).sum()),
    )
    return output, stats


def synthesize_level_kdtree(
    coarse_up: VoxelGrid,
    template_level: VoxelGrid,
    model: PCAModel,
    tree: KdTree,
    cfg: SynthesisConfig,
) -> VoxelGrid:
    if tree.coords is None:
        raise InvalidInputError("the kd-tree carries no template coordinates; build it with build_kdtree_index")
    n_active = int(np.count_nonzero(active_mask(template_level.array, cfg.nbhd_size)))
    point_keys = keys_to_ints(neighborhood_keys(template_level.array, tree.coords, cfg.nbhd_size))
    key_points = {}
    for point, key in enumerate(point_keys):
        key_points.setdefault(key, point)
    kd_index = KdTreeIndex(model, tree, cfg.width, n_active, key_points)
    return synthesize_level_kdtree_with_stats(coarse_up, template_level, kd_index, cfg)[0]
