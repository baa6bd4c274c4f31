"""Cluster criticality scoring and top-k cluster selection.

Each key cluster is summarized by an elementwise (max, min) envelope of
its member keys.  The scalar score upper-bounds q.k over every member:
per dimension it takes whichever envelope side the sign of q favors.
The matmul form computes the same number as two clamped products,
``max(Q,0) @ max_vec^T + min(Q,0) @ min_vec^T``, which vectorizes the
per-dimension case split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel
from .errors import DimensionError, ParameterError
from .tensorops import as_f32

__all__ = [
    "ClusterEnvelope",
    "SelectionResult",
    "build_envelopes",
    "quest_scalar",
    "quest_scores_loop",
    "tensor_quest",
    "tensor_quest_clamped_centers",
    "mean_center_scores",
    "select_topk_clusters",
]

DEFAULT_TOPK = 64


@dataclass
class ClusterEnvelope:
    max_vec: np.ndarray   # [C, D] elementwise max of member keys
    min_vec: np.ndarray   # [C, D] elementwise min
    member_order: np.ndarray | None = None   # token indices grouped by cluster
    member_starts: np.ndarray | None = None  # group start offsets into member_order

    @property
    def num_clusters(self) -> int:
        return self.max_vec.shape[0]

    def members(self, c: int) -> np.ndarray:
        starts = self.member_starts
        lo = starts[c]
        hi = starts[c + 1] if c + 1 < len(starts) else len(self.member_order)
        return self.member_order[lo:hi]


@dataclass
class SelectionResult:
    scores: np.ndarray     # [Gq, C]
    selected: np.ndarray   # [Gq, topk] cluster indices, descending score
    density: float         # mean selected key tokens / total key tokens


def build_envelopes(k: np.ndarray, model: ClusterModel) -> ClusterEnvelope:
    """Per-cluster elementwise max/min over member keys."""
    k = as_f32(k)
    order = np.argsort(model.assignments, kind="stable")
    starts = np.zeros(model.num_clusters, dtype=np.int64)
    starts[1:] = np.cumsum(model.counts)[:-1]
    grouped = k[order]
    max_vec = np.maximum.reduceat(grouped, starts, axis=0)
    min_vec = np.minimum.reduceat(grouped, starts, axis=0)
    return ClusterEnvelope(max_vec=max_vec, min_vec=min_vec,
                           member_order=order, member_starts=starts)


def quest_scalar(q_row: np.ndarray, env: ClusterEnvelope, c: int) -> float:
    """Upper bound on q.k over the members of cluster ``c``."""
    q_row = as_f32(q_row).reshape(-1)
    return float(np.maximum(q_row * env.max_vec[c], q_row * env.min_vec[c]).sum())


def quest_scores_loop(q_reps: np.ndarray, env: ClusterEnvelope) -> np.ndarray:
    """Scalar-form scores for every (query rep, cluster) pair.

    Oracle and timing baseline for :func:`tensor_quest`; deliberately
    evaluates the per-dimension max one pair at a time.
    """
    q_reps = as_f32(q_reps)
    out = np.empty((q_reps.shape[0], env.num_clusters), dtype=np.float32)
    for g in range(q_reps.shape[0]):
        for c in range(env.num_clusters):
            out[g, c] = quest_scalar(q_reps[g], env, c)
    return out


def tensor_quest(q_reps: np.ndarray, env: ClusterEnvelope) -> np.ndarray:
    """Matmul form of the scalar score: max(Q,0) max_vec^T + min(Q,0) min_vec^T."""
    q_reps = as_f32(q_reps)
    if q_reps.shape[1] != env.max_vec.shape[1]:
        raise DimensionError(
            f"query dim {q_reps.shape[1]} != envelope dim {env.max_vec.shape[1]}"
        )
    q_pos = np.maximum(q_reps, 0.0)
    q_neg = np.minimum(q_reps, 0.0)
    return q_pos @ env.max_vec.T + q_neg @ env.min_vec.T


def tensor_quest_clamped_centers(q_reps: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Ablation variant that clamps cluster centers instead of envelopes.

    Not an upper bound over members; kept for comparison runs only.
    """
    q_reps = as_f32(q_reps)
    centers = as_f32(centers)
    if q_reps.shape[1] != centers.shape[1]:
        raise DimensionError(f"query dim {q_reps.shape[1]} != center dim {centers.shape[1]}")
    return (np.maximum(q_reps, 0.0) @ np.maximum(centers, 0.0).T
            + np.minimum(q_reps, 0.0) @ np.minimum(centers, 0.0).T)


def mean_center_scores(q_reps: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Mean-based baseline scorer: plain Q_reps @ centers^T."""
    q_reps = as_f32(q_reps)
    centers = as_f32(centers)
    if q_reps.shape[1] != centers.shape[1]:
        raise DimensionError(f"query dim {q_reps.shape[1]} != center dim {centers.shape[1]}")
    return q_reps @ centers.T


def select_topk_clusters(scores: np.ndarray, topk: int, counts: np.ndarray) -> SelectionResult:
    """Top ``topk`` clusters per query cluster, ties broken by lower index.

    Density is the mean (over query clusters) fraction of key tokens
    covered by the selected clusters.
    """
    scores = as_f32(scores)
    c = scores.shape[1]
    if not 1 <= topk <= c:
        raise ParameterError(f"topk={topk} out of range [1, {c}]")
    counts = np.asarray(counts, dtype=np.int64)
    order = np.argsort(-scores, axis=1, kind="stable")
    selected = order[:, :topk]
    covered = counts[selected].sum(axis=1)
    density = float(covered.mean() / counts.sum())
    return SelectionResult(scores=scores, selected=selected, density=density)
