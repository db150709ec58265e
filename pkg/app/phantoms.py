# app/phantoms.py
"""
Deterministic test volumes: spherical shells standing in for skulls,
staircases with known surface steps, and cubes.
"""
from typing import Any, Dict, Literal, Mapping, Optional

import numpy as np
from scipy import ndimage

from app.errors import InvalidInputError
from app.logger_config import logger
from app.voxel_grid import Dims, VoxelGrid

PhantomKind = Literal["sphere_shell", "staircase", "cube"]
PHANTOM_KINDS = ("sphere_shell", "staircase", "cube")


def _center(dims: Dims, params: Mapping[str, Any]):
    center = params.get("center")
    if center is None:
        return tuple(n / 2 for n in dims)
    if len(center) != 3:
        raise InvalidInputError(f"center must have three values, got {center}")
    return tuple(float(c) for c in center)


def _sphere_shell(dims: Dims, params: Mapping[str, Any], seed: int) -> np.ndarray:
    r_in = float(params.get("r_in", 0))
    if "r_out" not in params:
        raise InvalidInputError("sphere_shell needs r_out")
    r_out = float(params["r_out"])
    rate = float(params.get("perturbation", 0.0))
    if not 0 <= r_in <= r_out:
        raise InvalidInputError(f"need 0 <= r_in <= r_out, got r_in={r_in}, r_out={r_out}")
    if not 0 <= rate <= 1:
        raise InvalidInputError(f"perturbation rate must lie in [0, 1], got {rate}")
    center = _center(dims, params)
    for c, n in zip(center, dims):
        if c - r_out < 0 or c + r_out > n - 1:
            raise InvalidInputError(f"r_out={r_out} around center {center} exceeds dims {dims}")

    nx, ny, nz = dims
    cx, cy, cz = center
    z, y, x = np.ogrid[:nz, :ny, :nx]
    dist = np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2)
    shell = (dist >= r_in) & (dist <= r_out)

    if rate > 0:
        # flips voxels on either side of the surface
        band = ndimage.binary_dilation(shell) & ~ndimage.binary_erosion(shell)
        rng = np.random.default_rng(seed)
        flips = band & (rng.random(shell.shape) < rate)
        shell = shell ^ flips
        logger.debug(f"Perturbed {int(flips.sum())} of {int(band.sum())} surface-band voxels")
    return shell


def _staircase(dims: Dims, params: Mapping[str, Any]) -> np.ndarray:
    """Columns along x filled from z = 0 up to a height profile h(x)."""
    pattern = params.get("pattern", "ramp")
    base = int(params.get("base", 1))
    nx, ny, nz = dims
    x = np.arange(nx)
    if pattern == "ramp":
        step = int(params.get("step", 1))
        heights = base + step * x
    elif pattern == "zigzag":
        step = int(params.get("step", 2))
        heights = base + step * (x % 2)
    else:
        raise InvalidInputError(f"staircase pattern must be ramp or zigzag, got {pattern!r}")
    if base < 0 or step < 1:
        raise InvalidInputError(f"staircase needs base >= 0 and step >= 1, got base={base}, step={step}")
    if heights.max() >= nz:
        raise InvalidInputError(f"staircase height {heights.max()} exceeds nz={nz}")

    z = np.arange(nz)[:, None, None]
    return np.broadcast_to(z <= heights[None, None, :], (nz, ny, nx))


def _cube(dims: Dims, params: Mapping[str, Any]) -> np.ndarray:
    if "side" not in params:
        raise InvalidInputError("cube needs side")
    side = int(params["side"])
    if side < 1 or side > min(dims):
        raise InvalidInputError(f"cube side {side} does not fit dims {dims}")
    origin = params.get("origin") or tuple((n - side) // 2 for n in dims)
    ox, oy, oz = (int(o) for o in origin)
    nx, ny, nz = dims
    if min(ox, oy, oz) < 0 or ox + side > nx or oy + side > ny or oz + side > nz:
        raise InvalidInputError(f"cube at {origin} with side {side} exceeds dims {dims}")
    arr = np.zeros((nz, ny, nx), dtype=bool)
    arr[oz:oz + side, oy:oy + side, ox:ox + side] = True
    return arr


def make_phantom(
    kind: PhantomKind,
    dims: Dims,
    params: Optional[Mapping[str, Any]] = None,
    seed: int = 0,
) -> VoxelGrid:
    params: Dict[str, Any] = dict(params or {})
    spacing = tuple(params.pop("spacing", (1.0, 1.0, 1.0)))
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise InvalidInputError(f"dims must be three values >= 1, got {dims}")
    logger.info(f"Making {kind} phantom {dims} with {params} (seed {seed})")

    if kind == "sphere_shell":
        arr = _sphere_shell(dims, params, seed)
    elif kind == "staircase":
        arr = _staircase(dims, params)
    elif kind == "cube":
        arr = _cube(dims, params)
    else:
        raise InvalidInputError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    return VoxelGrid.from_array(arr, spacing)
