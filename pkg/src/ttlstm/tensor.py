"""Index conventions and the core-chaining product for dense tensors.

Dense tensors throughout the package are C-ordered float64 numpy arrays,
so the last index varies fastest. Flat positions and multi-indices are
1-based and follow big-endian colexicographic order: the flat position of
``(i_1, ..., i_n)`` over extents ``(d_1, ..., d_n)`` is

    i_n + (i_{n-1} - 1) d_n + (i_{n-2} - 1) d_{n-1} d_n + ...

which coincides with numpy's row-major layout shifted to 1-based counting.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

__all__ = ["linear_index", "multi_index", "mode31_product", "chain_mode31"]


def linear_index(mi: tuple[int, ...], dims: tuple[int, ...]) -> int:
    """Map a 1-based multi-index to its 1-based colexicographic flat position.

    Raises ``IndexError`` when a coordinate falls outside its extent.
    """
    if len(mi) != len(dims):
        raise IndexError(f"multi-index has {len(mi)} coordinates for {len(dims)} extents")
    flat = 0
    for coord, extent in zip(mi, dims):
        if not 1 <= coord <= extent:
            raise IndexError(f"coordinate {coord} outside [1, {extent}]")
        flat = flat * extent + (coord - 1)
    return flat + 1


def multi_index(flat: int, dims: tuple[int, ...]) -> tuple[int, ...]:
    """Inverse of :func:`linear_index`: 1-based flat position to multi-index."""
    total = math.prod(dims)
    if not 1 <= flat <= total:
        raise IndexError(f"flat index {flat} outside [1, {total}]")
    rem = flat - 1
    coords = []
    for extent in reversed(dims):
        rem, offset = divmod(rem, extent)
        coords.append(offset + 1)
    return tuple(reversed(coords))


def mode31_product(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Contract the third axis of ``g1`` with the first axis of ``g2``.

    Both operands must be rank-3; the result has rank 4 with dims
    ``(g1.d1, g1.d2, g2.d2, g2.d3)`` and entries
    ``out[a, b, c, d] = sum_k g1[a, b, k] * g2[k, c, d]``.
    """
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.ndim != 3 or g2.ndim != 3:
        raise ShapeError(f"mode-(3,1) product needs rank-3 operands, got ranks {g1.ndim} and {g2.ndim}")
    if g1.shape[2] != g2.shape[0]:
        raise ShapeError(f"contraction extents differ: {g1.shape[2]} vs {g2.shape[0]}")
    return np.tensordot(g1, g2, axes=(2, 0))


def chain_mode31(cores: list[np.ndarray]) -> np.ndarray:
    """Chain rank-3 cores left to right, fusing the two middle axes after
    every step so the accumulator stays rank-3.

    The result has shape ``(d1_first, fused_middle, d3_last)`` where the
    fused middle enumerates the per-core middle indices colexicographically
    (first core slowest).
    """
    if not cores:
        raise ShapeError("empty core chain")
    acc = np.asarray(cores[0], dtype=np.float64)
    if acc.ndim != 3:
        raise ShapeError("chain cores must be rank-3")
    for core in cores[1:]:
        out = mode31_product(acc, core)
        acc = out.reshape(out.shape[0], out.shape[1] * out.shape[2], out.shape[3])
    return acc
