# app/surface.py
"""
Isosurface meshes of binary grids, mesh export and the terracing statistic.

Vertex coordinates are in mm: grid index (x, y, z) times spacing. Triangles
wind counter-clockwise seen from outside.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import stl
from pydantic import BaseModel, computed_field
from skimage import measure
from stl import mesh as stl_mesh

from app.errors import InvalidInputError, VolumeIOError
from app.logger_config import logger
from app.timing import measure_execution_time
from app.voxel_grid import VoxelGrid

MeshFormat = Literal["stl_binary", "obj"]
AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (n, 3) float64, mm
    triangles: np.ndarray  # (m, 3) int64

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3), dtype=np.float64), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def flipped(self) -> "Mesh":
        return Mesh(self.vertices, self.triangles[:, ::-1].copy())

    def triangle_vectors(self) -> np.ndarray:
        """(m, 3, 3) corner coordinates per triangle."""
        return self.vertices[self.triangles]


def _cross(mesh: Mesh) -> np.ndarray:
    v = mesh.triangle_vectors()
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def mesh_area(mesh: Mesh) -> float:
    if not mesh.n_triangles:
        return 0.0
    return float(0.5 * np.linalg.norm(_cross(mesh), axis=1).sum())


def mesh_volume(mesh: Mesh) -> float:
    """Signed enclosed volume; positive for outward-facing closed meshes."""
    if not mesh.n_triangles:
        return 0.0
    v = mesh.triangle_vectors()
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def unit_normals(mesh: Mesh) -> np.ndarray:
    normals = _cross(mesh)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    return np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)


def edge_multiplicities(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Undirected edges (sorted vertex pairs) and how many triangles use each."""
    if not mesh.n_triangles:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    return np.unique(edges, axis=0, return_counts=True)


def is_watertight(mesh: Mesh) -> bool:
    _, counts = edge_multiplicities(mesh)
    return bool(np.all(counts == 2))


@measure_execution_time
def marching_cubes(grid: VoxelGrid, iso: float = 0.5) -> Mesh:
    """
    Triangulates the iso-surface of `grid` with the classic 256-case table.
    Neighbouring cubes triangulate shared faces alike, so every edge is used
    by exactly two triangles. A one-voxel zero border is added so objects
    touching the grid boundary still close; vertices fall on edge midpoints
    since the data is binary.
    """
    logger.info(f"Marching cubes on {grid.dims} ({grid.occupied_count()} occupied voxels)")
    if grid.occupied_count() == 0:
        return Mesh.empty()

    padded = np.pad(grid.array.astype(np.float32), 1)
    sx, sy, sz = grid.spacing
    verts, faces, _, _ = measure.marching_cubes(
        padded, level=iso, spacing=(sz, sy, sx), method="lorensen", allow_degenerate=False
    )
    # [z, y, x] -> (x, y, z) is a reflection, so the winding flips with it
    vertices = verts[:, ::-1].astype(np.float64) - np.asarray(grid.spacing)
    mesh = Mesh(vertices, faces[:, ::-1].astype(np.int64))
    if mesh_volume(mesh) < 0:
        mesh = mesh.flipped()
    logger.info(f"Mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


def mesh_format(path: Union[str, Path]) -> MeshFormat:
    suffix = Path(path).suffix.lower()
    if suffix == ".stl":
        return "stl_binary"
    if suffix == ".obj":
        return "obj"
    raise InvalidInputError(f"cannot infer mesh format from {path!r}; use .stl or .obj")


def _write_stl(mesh: Mesh, path: Path) -> None:
    # STL keeps triangle soup only; shared vertices are not preserved
    out = stl_mesh.Mesh(np.zeros(mesh.n_triangles, dtype=stl_mesh.Mesh.dtype), remove_empty_areas=False)
    if mesh.n_triangles:
        out.vectors[:] = mesh.triangle_vectors()
        out.normals[:] = unit_normals(mesh)
    out.save(str(path), mode=stl.Mode.BINARY, update_normals=False)


def _write_obj(mesh: Mesh, path: Path) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


def export_mesh(mesh: Mesh, path: Union[str, Path], fmt: Optional[MeshFormat] = None) -> None:
    path = Path(path)
    fmt = fmt or mesh_format(path)
    logger.info(f"Writing {mesh.n_triangles} triangles to {path} as {fmt}")
    if mesh.n_triangles and (mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_vertices):
        raise InvalidInputError("mesh has triangle indices out of range")
    try:
        if fmt == "stl_binary":
            _write_stl(mesh, path)
        elif fmt == "obj":
            _write_obj(mesh, path)
        else:
            raise InvalidInputError(f"unknown mesh format {fmt!r}")
    except OSError as e:
        raise VolumeIOError(str(path), e) from e


def load_obj(path: Union[str, Path]) -> Mesh:
    """Reads `v` and `f` records; other records are ignored."""
    vertices, triangles = [], []
    try:
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    vertices.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    if len(parts) != 4:
                        raise InvalidInputError(f"{path}: only triangular faces are supported")
                    triangles.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    except OSError as e:
        raise VolumeIOError(str(path), e) from e
    return Mesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
    )


class StepHistogram(BaseModel):
    """
    Surface height steps per axis. `counts[axis][step]` is how often adjacent
    surface columns differ by `step` voxels when heights are measured along
    `axis`; zero steps are not recorded.
    """

    counts: Dict[str, Dict[int, int]]
    sign_flips: Dict[str, int]

    @computed_field
    @property
    def derivative_sign_flips(self) -> int:
        return sum(self.sign_flips.values())

    @computed_field
    @property
    def total(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())

    @computed_field
    @property
    def mean_step(self) -> float:
        if not self.total:
            return 0.0
        weighted = sum(step * n for c in self.counts.values() for step, n in c.items())
        return weighted / self.total


def _profile_steps(heights: np.ndarray, valid: np.ndarray, along: int) -> Tuple[np.ndarray, int]:
    """Nonzero height steps between neighbouring columns along one direction, and their sign flips."""
    h = np.moveaxis(heights, along, -1).astype(np.int64)
    v = np.moveaxis(valid, along, -1)
    delta = np.diff(h, axis=-1)
    delta[~(v[..., 1:] & v[..., :-1])] = 0

    rows = delta.reshape(-1, delta.shape[-1])
    line, pos = np.nonzero(rows)
    signs = np.sign(rows[line, pos])
    flips = int(np.count_nonzero((line[1:] == line[:-1]) & (signs[1:] != signs[:-1])))
    return np.abs(rows[line, pos]), flips


def terracing_stats(grid: VoxelGrid, axes: Sequence[int] = (0, 1, 2)) -> StepHistogram:
    """
    For every axis, the surface is read from both ends: each column
    perpendicular to the axis gives the index of its outermost occupied voxel,
    and neighbouring columns are compared along both perpendicular
    directions. Columns with no occupied voxel are skipped.

    This departs from reading a single profile outward from the volume
    centroid: both faces of every axis are scanned, so closed shells count
    their near and far sides and the histogram does not depend on where the
    centroid falls.
    """
    arr = grid.array
    counts: Dict[str, Dict[int, int]] = {}
    flips: Dict[str, int] = {}
    for axis in axes:
        if axis not in (0, 1, 2):
            raise InvalidInputError(f"axis must be 0, 1 or 2, got {axis}")
        np_axis = 2 - axis
        occupied = arr.any(axis=np_axis)
        n = arr.shape[np_axis]
        top = n - 1 - np.argmax(np.flip(arr, axis=np_axis), axis=np_axis)
        bottom = np.argmax(arr, axis=np_axis)

        steps, n_flips = [], 0
        for heights in (top, bottom):
            for along in (0, 1):
                s, f = _profile_steps(heights, occupied, along)
                steps.append(s)
                n_flips += f
        values, freq = np.unique(np.concatenate(steps), return_counts=True)
        name = AXIS_NAMES[axis]
        counts[name] = {int(v): int(c) for v, c in zip(values, freq)}
        flips[name] = n_flips
    return StepHistogram(counts=counts, sign_flips=flips)
