"""Exact reference attention, the exact per-query top-k oracle, and the
error metrics every approximation is judged against."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensorops import as_f32, row_softmax

__all__ = ["ErrorMetrics", "full_attention", "exact_topk_keys", "compare_outputs"]


@dataclass
class ErrorMetrics:
    rel_l2: float        # ||ref - approx||_F / ||ref||_F
    cosine_sim: float    # mean per-row cosine similarity
    snr_db: float        # 10*log10(||ref||^2 / ||ref - approx||^2); inf when identical
    max_abs: float       # largest absolute entry difference


def full_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                   block: int = 1024) -> np.ndarray:
    """Dense softmax attention: row_softmax(q k^T / sqrt(D)) v.

    Queries are processed in row blocks so the score matrix never
    exceeds block x Lk, keeping memory bounded at long sequence length.
    """
    q, k, v = as_f32(q), as_f32(k), as_f32(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError(f"expected 2-D q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"q and k head dims differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"k and v row counts differ: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float32)
    for lo in range(0, q.shape[0], block):
        hi = min(lo + block, q.shape[0])
        scores = q[lo:hi] @ k.T
        out[lo:hi] = row_softmax(scores, scale) @ v
    return out


def exact_topk_keys(q_row: np.ndarray, k: np.ndarray, kk: int) -> np.ndarray:
    """Indices of the ``kk`` largest q.k scores, descending, ties to lower index."""
    q_row = as_f32(q_row).reshape(-1)
    k = as_f32(k)
    if not 1 <= kk <= k.shape[0]:
        raise ParameterError(f"kk={kk} out of range [1, {k.shape[0]}]")
    scores = k @ q_row
    order = np.argsort(-scores, kind="stable")
    return order[:kk]


def compare_outputs(o_ref: np.ndarray, o_approx: np.ndarray) -> ErrorMetrics:
    """Error metrics of an approximate output against the exact one."""
    o_ref, o_approx = as_f32(o_ref), as_f32(o_approx)
    if o_ref.shape != o_approx.shape:
        raise DimensionError(f"shape mismatch: {o_ref.shape} vs {o_approx.shape}")
    ref = o_ref.astype(np.float64)
    diff = ref - o_approx.astype(np.float64)
    ref_norm = np.linalg.norm(ref)
    diff_norm = np.linalg.norm(diff)
    rel_l2 = float(diff_norm / ref_norm) if ref_norm > 0 else float(diff_norm > 0)

    a = ref.reshape(ref.shape[0], -1) if ref.ndim > 1 else ref.reshape(1, -1)
    b = o_approx.astype(np.float64).reshape(a.shape)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    both_zero = (na == 0) & (nb == 0)
    denom = np.where((na == 0) | (nb == 0), 1.0, na * nb)
    cos = (a * b).sum(axis=1) / denom
    cos[both_zero] = 1.0
    cosine_sim = float(cos.mean())

    snr_db = math.inf if diff_norm == 0 else float(10.0 * math.log10(ref_norm**2 / diff_norm**2))
    max_abs = float(np.abs(diff).max()) if diff.size else 0.0
    return ErrorMetrics(rel_l2=rel_l2, cosine_sim=cosine_sim, snr_db=snr_db, max_abs=max_abs)
