"""Dense f32 tensor kernels used by every other module.

Tensors are plain ``numpy.ndarray`` objects with dtype float32 and C
(row-major) layout.  ``matmul`` delegates to numpy's BLAS-backed ``@``;
with a single BLAS thread the reduction order is fixed by the library,
so repeated single-threaded runs are bit-identical.  Multi-threaded
BLAS is reproducible only to ~1e-5 relative tolerance.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError

__all__ = ["as_f32", "matmul", "row_softmax", "l2_normalize_rows", "NormalizedRows"]

# Row norms below this are treated as zero vectors.
DEGENERATE_NORM = 1e-12


def as_f32(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=np.float32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """f32 matrix product c[i,j] = sum_t a[i,t]*b[t,j]."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(s: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Numerically stable softmax over the last axis of ``scale * s``.

    The row maximum is subtracted before exponentiation, so arbitrarily
    large finite scores do not overflow.
    """
    s = as_f32(s)
    z = scale * s.astype(np.float32)
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


class NormalizedRows(NamedTuple):
    rows: np.ndarray
    degenerate: np.ndarray  # indices of rows with norm < DEGENERATE_NORM


def l2_normalize_rows(x: np.ndarray) -> NormalizedRows:
    """Scale each row to unit L2 norm.

    Rows with norm below ``DEGENERATE_NORM`` are returned as all-zeros
    and listed in ``degenerate`` instead of producing NaNs.  Rows whose
    norm is already 1 within f32 rounding are passed through unchanged,
    which makes the operation bit-exactly idempotent.
    """
    x = as_f32(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True).astype(np.float32)
    flat = norms[..., 0]
    degenerate = np.flatnonzero(flat < DEGENERATE_NORM)
    already_unit = np.abs(flat - 1.0) <= 2e-6
    safe = np.where((flat < DEGENERATE_NORM) | already_unit, 1.0, flat)
    out = (x / safe[..., None]).astype(np.float32)
    if degenerate.size:
        out[degenerate] = 0.0
    return NormalizedRows(out, degenerate)
