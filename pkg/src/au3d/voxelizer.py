"""Landmark set -> C x C x C binary occupancy grid.

Each frame is min-max normalised per axis over its own landmarks, scaled by
``C - 1``, rounded half-up to integer cell indices and written into a zero
grid. Grids are indexed ``[x, y, z]``.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DegenerateAxis, InvalidC, NonFinite, ShapeMismatch, VoxelFileError

DEFAULT_C = 24
VOXEL_MAGIC = b"AUVX"
VOXEL_VERSION = 1


def degenerate_axes(points: np.ndarray) -> np.ndarray:
    """Boolean mask over (x, y, z): True where max == min."""
    pts = np.asarray(points, dtype=np.float64)
    return pts.max(axis=-2) == pts.min(axis=-2)


def _offsets(points, relaxed: bool) -> tuple[np.ndarray, np.ndarray]:
    """(points - min, max - min) per axis, with flat spans set to 1 when relaxed."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3 or pts.ndim not in (2, 3):
        raise ShapeMismatch(f"expected (N, 3) or (F, N, 3) points, got {pts.shape}")
    if pts.shape[-2] < 2:
        raise DegenerateAxis("need at least two landmarks to normalise")
    if not np.all(np.isfinite(pts)):
        raise NonFinite("non-finite landmark coordinate")
    lo = pts.min(axis=-2, keepdims=True)
    span = pts.max(axis=-2, keepdims=True) - lo
    flat = span == 0
    if flat.any():
        if not relaxed:
            frames = np.argwhere(flat.any(axis=-1).reshape(-1)).ravel().tolist()
            raise DegenerateAxis(f"max == min on some axis (frame index {frames[:5]})")
        span = np.where(flat, 1.0, span)
    return pts - lo, span


def normalize(points: np.ndarray, relaxed: bool = False) -> np.ndarray:
    """Per-axis min-max normalisation to [0, 1].

    Works on a single (N, 3) frame or a batch (F, N, 3). A flat axis raises
    :class:`DegenerateAxis` unless ``relaxed``, in which case it maps to 0;
    use :func:`degenerate_axes` to find the affected frames.
    """
    d, span = _offsets(points, relaxed)
    return d / span


def _round_half_up(s: np.ndarray, c: int) -> np.ndarray:
    whole = np.floor(s)
    # s - floor(s) is exact, unlike floor(s + 0.5) which can round up early
    cells = whole + (s - whole >= 0.5)
    return np.clip(cells, 0, c - 1).astype(np.intp)


def _check_c(c: int):
    if c < 2:
        raise InvalidC(f"grid side must be >= 2, got {c}")


def scale(norm: np.ndarray, c: int = DEFAULT_C) -> np.ndarray:
    """Map [0, 1] coordinates to integer cells in [0, c-1], rounding half up."""
    _check_c(c)
    return _round_half_up(np.asarray(norm, dtype=np.float64) * (c - 1), c)


def cell_indices(points: np.ndarray, c: int = DEFAULT_C, relaxed: bool = False) -> np.ndarray:
    """Integer cells for (N, 3) or (F, N, 3) points.

    Same as ``scale(normalize(points), c)`` but multiplies by ``c - 1`` before
    dividing by the span, so a landmark sitting exactly on a half-cell boundary
    (common with integer or grid-aligned coordinates) rounds up as it should.
    """
    _check_c(c)
    d, span = _offsets(points, relaxed)
    return _round_half_up(d * (c - 1) / span, c)


def voxelize(cells: np.ndarray, c: int = DEFAULT_C) -> np.ndarray:
    """Occupancy grid(s) with a 1 at every landmark cell.

    ``cells`` is (N, 3) -> (c, c, c) or (F, N, 3) -> (F, c, c, c), uint8.
    """
    cells = np.asarray(cells)
    if cells.ndim == 2:
        grid = np.zeros((c, c, c), dtype=np.uint8)
        grid[cells[:, 0], cells[:, 1], cells[:, 2]] = 1
        return grid
    grids = np.zeros((cells.shape[0], c, c, c), dtype=np.uint8)
    f = np.repeat(np.arange(cells.shape[0]), cells.shape[1])
    flat = cells.reshape(-1, 3)
    grids[f, flat[:, 0], flat[:, 1], flat[:, 2]] = 1
    return grids


def encode_frame(points: np.ndarray, c: int = DEFAULT_C) -> np.ndarray:
    return voxelize(cell_indices(points, c), c)


def encode_frames(points: np.ndarray, c: int = DEFAULT_C, relaxed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Encode a (F, N, 3) batch. Returns (grids, flagged) where ``flagged``
    marks frames that had a degenerate axis (only possible when ``relaxed``)."""
    pts = np.asarray(points, dtype=np.float64)
    grids = voxelize(cell_indices(pts, c, relaxed), c)
    return grids, degenerate_axes(pts).any(axis=-1)


def write_voxel_grid(grid: np.ndarray) -> bytes:
    """Serialise one grid: ``AUVX``, u8 version, u32 c, MSB-first packed bits in x, y, z order."""
    grid = np.asarray(grid)
    c = grid.shape[0]
    if grid.shape != (c, c, c):
        raise ShapeMismatch(f"grid must be cubic, got {grid.shape}")
    bits = np.packbits(grid.astype(bool).ravel(order="C"), bitorder="big")
    return VOXEL_MAGIC + struct.pack("<BI", VOXEL_VERSION, c) + bits.tobytes()


def read_voxel_grid(data: bytes) -> np.ndarray:
    if len(data) < 9 or data[:4] != VOXEL_MAGIC:
        raise VoxelFileError("bad magic: not an AUVX voxel grid")
    version, c = struct.unpack_from("<BI", data, 4)
    if version != VOXEL_VERSION:
        raise VoxelFileError(f"unsupported voxel grid version {version}")
    nbytes = -(-c ** 3 // 8)
    if len(data) != 9 + nbytes:
        raise VoxelFileError(f"expected {9 + nbytes} bytes for c={c}, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=9), count=c ** 3, bitorder="big")
    return bits.reshape(c, c, c)
