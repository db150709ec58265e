import numpy as np
import pytest
from stl import mesh as stl_mesh

from app.errors import InvalidInputError, VolumeIOError
from app.phantoms import make_phantom
from app.surface import (
    Mesh,
    edge_multiplicities,
    export_mesh,
    is_watertight,
    load_obj,
    marching_cubes,
    mesh_area,
    mesh_format,
    mesh_volume,
    terracing_stats,
)
from app.voxel_grid import VoxelGrid
from tests.conftest import random_grid


@pytest.fixture
def triangle():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return Mesh(vertices, np.array([[0, 1, 2]]))


@pytest.fixture(scope="module")
def solid_sphere():
    return make_phantom("sphere_shell", (16, 16, 16), {"r_out": 6})


class TestMarchingCubes:
    def test_empty_grid(self):
        mesh = marching_cubes(VoxelGrid.empty((4, 4, 4)))
        assert mesh.n_vertices == 0
        assert mesh.n_triangles == 0

    def test_single_voxel_is_closed_octahedron(self):
        arr = np.zeros((3, 3, 3), dtype=bool)
        arr[1, 1, 1] = True
        mesh = marching_cubes(VoxelGrid.from_array(arr))
        assert mesh.n_triangles == 8
        assert mesh.n_vertices == 6
        assert is_watertight(mesh)
        assert mesh_volume(mesh) == pytest.approx(1 / 6)
        assert mesh_area(mesh) == pytest.approx(np.sqrt(3))

    def test_voxel_on_the_boundary_still_closes(self):
        arr = np.zeros((2, 2, 2), dtype=bool)
        arr[0, 0, 0] = True
        mesh = marching_cubes(VoxelGrid.from_array(arr))
        assert is_watertight(mesh)
        assert mesh.vertices.min(axis=0).tolist() == [-0.5, -0.5, -0.5]

    def test_solid_sphere(self, solid_sphere):
        mesh = marching_cubes(solid_sphere)
        _, counts = edge_multiplicities(mesh)
        assert np.all(counts == 2)
        assert mesh_volume(mesh) > 0
        assert mesh_area(mesh) == pytest.approx(452.4, rel=0.15)
        assert mesh_volume(mesh) == pytest.approx(904.8, rel=0.15)

    @pytest.mark.parametrize("seed", range(30))
    def test_random_grids_are_watertight(self, seed):
        grid = random_grid(np.random.default_rng(seed), (8, 8, 8), p=0.4)
        mesh = marching_cubes(grid)
        _, counts = edge_multiplicities(mesh)
        assert set(counts.tolist()) == {2}
        assert mesh_volume(mesh) > 0

    def test_spacing_scales_vertices(self):
        arr = np.zeros((6, 6, 6), dtype=bool)
        arr[1:5, 1:5, 1:5] = True
        mesh = marching_cubes(VoxelGrid.from_array(arr, spacing=(2.0, 1.0, 1.0)))
        assert mesh.vertices.min(axis=0).tolist() == [1.0, 0.5, 0.5]
        assert mesh.vertices.max(axis=0).tolist() == [9.0, 4.5, 4.5]
        assert is_watertight(mesh)


class TestExport:
    def test_format_from_suffix(self):
        assert mesh_format("a.STL") == "stl_binary"
        assert mesh_format("a.obj") == "obj"
        with pytest.raises(InvalidInputError):
            mesh_format("a.ply")

    def test_empty_stl_is_header_and_zero_count(self, tmp_path):
        path = tmp_path / "empty.stl"
        export_mesh(Mesh.empty(), path)
        data = path.read_bytes()
        assert len(data) == 84
        assert int.from_bytes(data[80:84], "little") == 0

    def test_stl_normal_faces_outward(self, tmp_path, triangle):
        path = tmp_path / "one.stl"
        export_mesh(triangle, path)
        assert path.stat().st_size == 84 + 50
        loaded = stl_mesh.Mesh.from_file(str(path))
        assert np.allclose(loaded.normals[0], [0.0, 0.0, 1.0])
        assert np.allclose(loaded.vectors[0], triangle.vertices)

    def test_obj_round_trip(self, tmp_path):
        mesh = marching_cubes(make_phantom("cube", (6, 6, 6), {"side": 3, "spacing": (0.3, 0.7, 1.1)}))
        path = tmp_path / "cube.obj"
        export_mesh(mesh, path)
        loaded = load_obj(path)
        assert np.array_equal(loaded.vertices, mesh.vertices)
        assert np.array_equal(loaded.triangles, mesh.triangles)

    def test_out_of_range_indices(self, tmp_path):
        bad = Mesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(InvalidInputError):
            export_mesh(bad, tmp_path / "bad.obj")

    def test_unwritable_path(self, tmp_path, triangle):
        with pytest.raises(VolumeIOError):
            export_mesh(triangle, tmp_path / "missing" / "out.stl")


class TestTerracing:
    def test_ramp_has_unit_steps(self):
        grid = make_phantom("staircase", (8, 4, 16), {"pattern": "ramp"})
        stats = terracing_stats(grid, axes=(2,))
        assert stats.counts["z"] == {1: 4 * 7}
        assert stats.sign_flips["z"] == 0
        assert stats.mean_step == 1.0

    def test_zigzag_flips_every_column(self):
        grid = make_phantom("staircase", (8, 4, 16), {"pattern": "zigzag"})
        stats = terracing_stats(grid, axes=(2,))
        assert stats.counts["z"] == {2: 4 * 7}
        assert stats.sign_flips["z"] == 4 * 6
        assert stats.derivative_sign_flips == 24
        assert stats.mean_step == 2.0

    def test_half_space_is_flat(self):
        arr = np.zeros((8, 8, 8), dtype=bool)
        arr[:3] = True
        stats = terracing_stats(VoxelGrid.from_array(arr))
        assert stats.total == 0
        assert stats.mean_step == 0.0

    def test_empty_grid(self):
        assert terracing_stats(VoxelGrid.empty((4, 4, 4))).total == 0

    def test_unknown_axis(self):
        with pytest.raises(InvalidInputError):
            terracing_stats(VoxelGrid.empty((4, 4, 4)), axes=(3,))
