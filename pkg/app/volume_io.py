# app/volume_io.py
import json
from pathlib import Path
from typing import Literal, Optional, Tuple

import nrrd
import numpy as np

from app.errors import VolumeFormatError, VolumeIOError
from app.logger_config import logger
from app.voxel_grid import VoxelGrid

VolumeFormat = Literal["nrrd", "raw+json"]

# Refuse headers declaring more voxels than this (2**34 bytes at one byte per voxel).
MAX_VOXELS = 2**34

NRRD_BYTE_TYPES = {
    "uint8", "uint8_t", "uchar", "unsigned char",
    "int8", "int8_t", "signed char", "char",
}


def volume_format(path) -> VolumeFormat:
    suffixes = "".join(Path(path).suffixes).lower()
    if suffixes.endswith((".nrrd", ".nhdr")):
        return "nrrd"
    if suffixes.endswith(".raw"):
        return "raw+json"
    raise VolumeFormatError(f"Cannot infer volume format from {path}; use .nrrd, .nhdr or .raw")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def _check_dims(dims, path) -> Tuple[int, int, int]:
    try:
        dims = tuple(int(d) for d in dims)
    except (TypeError, ValueError) as e:
        raise VolumeFormatError(f"{path}: malformed dims {dims!r}") from e
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{path}: dims must be three positive values, got {dims}")
    if np.prod(dims, dtype=object) > MAX_VOXELS:
        raise VolumeFormatError(f"{path}: dims {dims} overflow the {MAX_VOXELS} voxel limit")
    return dims


def _binarize_payload(values: np.ndarray, path) -> np.ndarray:
    values = np.asarray(values)
    if values.dtype.kind == "f":
        bad = ~np.isfinite(values) | (values < 0)
    elif values.dtype.kind == "i":
        bad = values < 0
    else:
        bad = None
    if bad is not None and bad.any():
        raise VolumeFormatError(
            f"{path}: {int(bad.sum())} voxels fall outside {{0, 1}} after thresholding at 0.5"
        )
    return values >= 0.5


def _nrrd_spacing(header: dict, path) -> Tuple[float, float, float]:
    directions = header.get("space directions")
    if directions is not None:
        directions = np.asarray(directions, dtype=np.float64)
        if directions.shape != (3, 3) or np.isnan(directions).any():
            raise VolumeFormatError(f"{path}: space directions must be a 3x3 matrix")
        if np.count_nonzero(directions - np.diag(np.diag(directions))):
            raise VolumeFormatError(f"{path}: only diagonal space directions are supported")
        spacing = np.abs(np.diag(directions))
    elif header.get("spacings") is not None:
        spacing = np.abs(np.asarray(header["spacings"], dtype=np.float64))
    else:
        spacing = np.ones(3)
    if spacing.shape != (3,) or (spacing <= 0).any():
        raise VolumeFormatError(f"{path}: invalid spacing {spacing.tolist()}")
    return tuple(float(s) for s in spacing)


def _load_nrrd(path: Path) -> VoxelGrid:
    try:
        header = nrrd.read_header(str(path))
    except nrrd.NRRDError as e:
        raise VolumeFormatError(f"{path}: malformed NRRD header: {e}") from e
    except OSError as e:
        raise VolumeIOError(path, e) from e

    if int(header.get("dimension", 0)) != 3:
        raise VolumeFormatError(f"{path}: expected dimension 3, got {header.get('dimension')}")
    if str(header.get("type", "")).lower() not in NRRD_BYTE_TYPES:
        raise VolumeFormatError(f"{path}: unsupported element type {header.get('type')!r}")
    # sizes are listed x-fastest
    _check_dims(header.get("sizes", ()), path)

    try:
        data, header = nrrd.read(str(path), index_order="C")
    except nrrd.NRRDError as e:
        raise VolumeFormatError(f"{path}: malformed NRRD payload: {e}") from e
    except OSError as e:
        raise VolumeIOError(path, e) from e

    return VoxelGrid.from_array(_binarize_payload(data, path), _nrrd_spacing(header, path))


def _load_raw(path: Path) -> VoxelGrid:
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"{meta_path}: malformed JSON sidecar: {e}") from e
    except OSError as e:
        raise VolumeIOError(meta_path, e) from e
    if not isinstance(meta, dict) or "dims" not in meta:
        raise VolumeFormatError(f"{meta_path}: sidecar must declare 'dims'")

    dims = _check_dims(meta["dims"], meta_path)
    spacing = meta.get("spacing", [1.0, 1.0, 1.0])
    element_type = meta.get("element_type", "uint8")
    if element_type not in ("uint8", "bit"):
        raise VolumeFormatError(f"{meta_path}: unsupported element_type {element_type!r}")

    try:
        payload = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise VolumeIOError(path, e) from e

    n_voxels = int(np.prod(dims))
    expected = n_voxels if element_type == "uint8" else -(-n_voxels // 8)
    if payload.size != expected:
        raise VolumeFormatError(
            f"{path}: payload holds {payload.size} bytes, header dims {dims} need {expected}"
        )
    if element_type == "bit":
        payload = np.unpackbits(payload, count=n_voxels, bitorder="little")

    nx, ny, nz = dims
    bits = _binarize_payload(payload, path).reshape(nz, ny, nx)
    try:
        return VoxelGrid.from_array(bits, tuple(spacing))
    except ValueError as e:
        raise VolumeFormatError(f"{meta_path}: {e}") from e


def load_volume(path, fmt: Optional[VolumeFormat] = None) -> VoxelGrid:
    """
    Reads a binary mask. Any voxel value >= 0.5 becomes 1; negative or
    non-finite values are rejected with their count.
    """
    path = Path(path)
    fmt = fmt or volume_format(path)
    logger.info(f"Loading {fmt} volume from {path}")
    if not path.exists():
        raise VolumeIOError(path, FileNotFoundError("no such file"))
    if fmt == "nrrd":
        grid = _load_nrrd(path)
    elif fmt == "raw+json":
        grid = _load_raw(path)
    else:
        raise VolumeFormatError(f"unknown volume format {fmt!r}")
    logger.info(f"Loaded {grid}")
    return grid


def save_volume(
    grid: VoxelGrid,
    path,
    fmt: Optional[VolumeFormat] = None,
    encoding: Literal["gzip", "raw"] = "gzip",
    element_type: Literal["uint8", "bit"] = "uint8",
) -> Path:
    """
    Writes `grid` so that load_volume returns it bit-for-bit. A `.nhdr` path
    produces a detached header next to its data file.
    """
    path = Path(path)
    fmt = fmt or volume_format(path)
    logger.info(f"Saving {grid} as {fmt} to {path}")
    data = grid.array.astype(np.uint8)
    try:
        if fmt == "nrrd":
            header = {
                "space dimension": 3,
                "space directions": np.diag(grid.spacing),
                "kinds": ["domain", "domain", "domain"],
                "encoding": encoding,
            }
            nrrd.write(str(path), data, header, index_order="C")
        elif fmt == "raw+json":
            if element_type == "bit":
                payload = np.packbits(data.ravel(), bitorder="little")
            else:
                payload = data.ravel()
            path.write_bytes(payload.tobytes())
            meta = {"dims": list(grid.dims), "spacing": list(grid.spacing), "element_type": element_type}
            sidecar_path(path).write_text(json.dumps(meta, indent=2))
        else:
            raise VolumeFormatError(f"unknown volume format {fmt!r}")
    except OSError as e:
        raise VolumeIOError(path, e) from e
    return path
