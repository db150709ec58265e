import json

import nrrd
import numpy as np
import pytest

from app.errors import VolumeFormatError, VolumeIOError
from app.volume_io import load_volume, save_volume, sidecar_path, volume_format
from app.voxel_grid import VoxelGrid
from tests.conftest import random_grid


def test_volume_format_from_suffix():
    assert volume_format("a/b.nrrd") == "nrrd"
    assert volume_format("a/b.nhdr") == "nrrd"
    assert volume_format("a/b.raw") == "raw+json"
    with pytest.raises(VolumeFormatError):
        volume_format("a/b.nii.gz")


def test_raw_json_example(tmp_path):
    path = tmp_path / "two.raw"
    path.write_bytes(bytes([0, 1, 0, 0, 0, 0, 0, 1]))
    sidecar_path(path).write_text(json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1]}))
    grid = load_volume(path)
    assert grid.occupied_count() == 2
    assert grid.get(1, 0, 0) == 1
    assert grid.get(1, 1, 1) == 1


@pytest.mark.parametrize("name", ["vol.nrrd", "vol.nhdr", "vol.raw"])
def test_round_trip_non_power_of_two(tmp_path, rng, name):
    grid = random_grid(rng, (9, 6, 13), 0.4, spacing=(0.5, 0.75, 2.0))
    assert load_volume(save_volume(grid, tmp_path / name)) == grid


def test_raw_encoding_and_bit_payload(tmp_path, rng):
    grid = random_grid(rng, (7, 5, 3), 0.5)
    assert load_volume(save_volume(grid, tmp_path / "a.nrrd", encoding="raw")) == grid
    path = save_volume(grid, tmp_path / "b.raw", element_type="bit")
    assert path.stat().st_size == -(-grid.n_voxels // 8)
    assert load_volume(path) == grid


def test_values_above_half_become_one(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.uint8)
    data[0, 0, 0] = 255
    path = tmp_path / "v.nrrd"
    nrrd.write(str(path), data, index_order="C")
    assert load_volume(path).occupied_count() == 1


def test_payload_size_mismatch(tmp_path):
    path = tmp_path / "short.raw"
    path.write_bytes(bytes(7))
    sidecar_path(path).write_text(json.dumps({"dims": [2, 2, 2]}))
    with pytest.raises(VolumeFormatError, match="7 bytes"):
        load_volume(path)


def test_oversized_dims_rejected(tmp_path):
    path = tmp_path / "huge.raw"
    path.write_bytes(b"")
    sidecar_path(path).write_text(json.dumps({"dims": [2**20, 2**20, 2**20]}))
    with pytest.raises(VolumeFormatError, match="overflow"):
        load_volume(path)


def test_negative_values_rejected(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.int8)
    data[1, 1, 1] = -1
    path = tmp_path / "neg.nrrd"
    nrrd.write(str(path), data, index_order="C")
    with pytest.raises(VolumeFormatError, match="1 voxels"):
        load_volume(path)


def test_non_volume_nrrd_rejected(tmp_path):
    path = tmp_path / "flat.nrrd"
    nrrd.write(str(path), np.zeros((4, 4), dtype=np.uint8), index_order="C")
    with pytest.raises(VolumeFormatError, match="dimension 3"):
        load_volume(path)


def test_float_nrrd_rejected(tmp_path):
    path = tmp_path / "f.nrrd"
    nrrd.write(str(path), np.zeros((2, 2, 2), dtype=np.float32), index_order="C")
    with pytest.raises(VolumeFormatError, match="element type"):
        load_volume(path)


def test_malformed_sidecar(tmp_path):
    path = tmp_path / "bad.raw"
    path.write_bytes(bytes(8))
    sidecar_path(path).write_text("{not json")
    with pytest.raises(VolumeFormatError):
        load_volume(path)


def test_missing_file(tmp_path):
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "missing.nrrd")


def test_unwritable_target(tmp_path):
    with pytest.raises(VolumeIOError):
        save_volume(VoxelGrid.empty((2, 2, 2)), tmp_path / "no" / "such" / "dir.nrrd")
