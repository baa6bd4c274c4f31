"""K-means core and the clustering strategies built on it.

Queries are clustered on the unit sphere (normalize, then standard
k-means), which groups vectors by angle while leaving each query's
key ranking unchanged.  Keys are clustered in the original Euclidean
space with a multi-stage scheme: each round clusters the still-unassigned
tokens, tokens that land within ``tau`` of a center are retired, and the
accumulated center set grows until every token is covered or the center
budget is exhausted, in which case the layer is flagged hard to compress.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .tensorops import as_f32, l2_normalize_rows

__all__ = [
    "ClusterModel",
    "CompactnessReport",
    "kmeans",
    "cluster_queries",
    "multi_stage_cluster_keys",
    "compute_tau",
    "compactness",
    "warm_start_update",
    "nearest_center_mse",
]

DEFAULT_MAX_ITER = 25
DEFAULT_TOL = 1e-4
DEFAULT_QUERY_CLUSTERS = 65
DEFAULT_STAGE0_CLUSTERS = 100
DEFAULT_TAU_FACTOR = 1.5
STAGE_FLOOR = 8


@dataclass
class ClusterModel:
    centers: np.ndarray          # [C, D] f32
    assignments: np.ndarray      # [N] int32, values in [0, C)
    counts: np.ndarray           # [C] int64, all >= 1
    flag_full: bool = False
    stage_count: int = 1
    n_iter: int = 0                              # Lloyd iterations executed
    inertia_history: list = field(default_factory=list)   # WSS after each assignment
    stage_mse: list = field(default_factory=list)          # all-token MSE after each stage
    tau: float | None = None     # threshold used by the producing multi-stage call

    @property
    def num_clusters(self) -> int:
        return self.centers.shape[0]


@dataclass
class CompactnessReport:
    mse_per_head: list    # MSE of each head's clustering
    mse_layer: float      # mean over heads
    comp: float           # 1 / mse_layer; inf when mse_layer == 0
    db_index: float       # Davies-Bouldin, averaged over heads


def _pairwise_sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances [N, C], clipped at zero."""
    d = (
        (x * x).sum(axis=1, keepdims=True)
        - 2.0 * (x @ centers.T)
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d, 0.0, out=d)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float32)
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[i] = x[idx]
        np.minimum(closest, ((x - centers[i]) ** 2).sum(axis=1), out=closest)
    return centers


def _assign(x: np.ndarray, centers: np.ndarray):
    d = _pairwise_sq_dists(x, centers)
    labels = d.argmin(axis=1).astype(np.int32)  # ties -> lower index
    return labels, d


def _repair_empty(x, centers, labels, d):
    """Reseed each empty cluster to the point farthest from its current center."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    # Reseeding can empty a singleton donor cluster, so loop to a fixed point.
    for _ in range(k):
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        c = int(empty[0])
        assigned = d[np.arange(x.shape[0]), labels]
        far = int(assigned.argmax())
        centers[c] = x[far]
        labels[far] = c
        d[:, c] = ((x - centers[c]) ** 2).sum(axis=1)
        counts = np.bincount(labels, minlength=k)
    return labels, counts


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float) -> ClusterModel:
    """Lloyd iterations from the given initial centers, with empty-cluster repair."""
    x = as_f32(x)
    centers = as_f32(centers).copy()
    n, d_dim = x.shape
    k = centers.shape[0]
    inertia_history = []
    labels = np.zeros(n, dtype=np.int32)
    n_iter = 0
    for _ in range(max_iter):
        n_iter += 1
        labels, d = _assign(x, centers)
        labels, counts = _repair_empty(x, centers, labels, d)
        inertia_history.append(float(d[np.arange(n), labels].sum()))
        # Group-sum via argsort + reduceat; much faster than scatter-adds.
        order = np.argsort(labels, kind="stable")
        starts = np.zeros(k, dtype=np.int64)
        starts[1:] = np.cumsum(counts)[:-1]
        new_centers = np.add.reduceat(x[order].astype(np.float64), starts, axis=0)
        new_centers /= counts[:, None]
        new_centers = new_centers.astype(np.float32)
        movement = float(np.linalg.norm(new_centers - centers, axis=1).mean())
        centers = new_centers
        if movement < tol:
            break
    labels, d = _assign(x, centers)
    labels, counts = _repair_empty(x, centers, labels, d)
    return ClusterModel(
        centers=centers,
        assignments=labels,
        counts=counts.astype(np.int64),
        n_iter=n_iter,
        inertia_history=inertia_history,
    )


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = DEFAULT_MAX_ITER,
           tol: float = DEFAULT_TOL) -> ClusterModel:
    """k-means++ seeded Lloyd clustering; deterministic for a given seed."""
    x = as_f32(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError(f"kmeans needs a non-empty [N, D] input, got shape {x.shape}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if k > x.shape[0]:
        raise ParameterError(f"k={k} exceeds the number of points N={x.shape[0]}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)
    return _lloyd(x, centers, max_iter, tol)


def warm_start_update(k_next: np.ndarray, prev_centers: np.ndarray,
                      max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> ClusterModel:
    """Re-cluster with a fixed cluster count, starting from previous centers."""
    k_next = as_f32(k_next)
    prev_centers = as_f32(prev_centers)
    if prev_centers.shape[0] > k_next.shape[0]:
        raise ParameterError(
            f"C={prev_centers.shape[0]} centers exceed N={k_next.shape[0]} points"
        )
    return _lloyd(k_next, prev_centers, max_iter, tol)


def cluster_queries(q: np.ndarray, num_clusters: int = DEFAULT_QUERY_CLUSTERS,
                    seed: int = 0, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                    init_centers: np.ndarray | None = None):
    """Cluster L2-normalized queries; returns (model, representatives).

    Representatives are the centroids of each cluster's normalized
    members (not re-normalized).  Passing ``init_centers`` warm-starts
    Lloyd instead of running k-means++.
    """
    q = as_f32(q)
    qn = l2_normalize_rows(q).rows
    if init_centers is not None:
        model = _lloyd(qn, init_centers, max_iter, tol)
    else:
        model = kmeans(qn, num_clusters, seed, max_iter, tol)
    reps = np.zeros((model.num_clusters, q.shape[1]), dtype=np.float64)
    np.add.at(reps, model.assignments, qn.astype(np.float64))
    reps /= model.counts[:, None]
    return model, reps.astype(np.float32)


def nearest_center_mse(x: np.ndarray, centers: np.ndarray) -> float:
    """Mean squared distance of each point to its nearest center."""
    d = _pairwise_sq_dists(as_f32(x), as_f32(centers))
    return float(d.min(axis=1).mean())


def compute_tau(k: np.ndarray, stage0: ClusterModel, factor: float = DEFAULT_TAU_FACTOR) -> float:
    """Threshold = factor x mean token-to-assigned-center distance."""
    k = as_f32(k)
    dists = np.linalg.norm(
        k.astype(np.float64) - stage0.centers[stage0.assignments].astype(np.float64), axis=1
    )
    return float(factor * dists.mean())


def multi_stage_cluster_keys(
    k: np.ndarray,
    tau: float,
    n_max: int = 1000,
    m0: int = DEFAULT_STAGE0_CLUSTERS,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    stage0: ClusterModel | None = None,
    stage_schedule=None,
) -> ClusterModel:
    """Threshold-bounded multi-stage clustering of key vectors.

    Each round clusters the currently-unassigned tokens; tokens whose
    distance to their round center is strictly below ``tau`` are retired.
    Centers accumulate across rounds.  If the accumulated center count
    reaches ``n_max`` before every token is covered, the model is flagged
    ``flag_full`` (serve this layer with full attention).  Final
    assignments map every token to its nearest accumulated center, and
    centers left without members are dropped.

    ``stage_schedule(t, remaining, total)`` may override the per-round
    cluster count; the default uses ``m0`` for round 0 and then shrinks
    proportionally to the remaining token fraction (floor of 8).

    A ``stage0`` model (a plain k-means of all keys with ``m0`` centers
    and the same seed) may be passed to reuse the clustering that sized
    ``tau``; it is identical to what round 0 would compute.
    """
    k = as_f32(k)
    if k.ndim != 2 or k.shape[0] == 0:
        raise ParameterError(f"multi-stage clustering needs a non-empty [N, D] input, got {k.shape}")
    if m0 < 1:
        raise ParameterError(f"m0 must be >= 1, got {m0}")
    if n_max < m0:
        raise ParameterError(f"n_max={n_max} must be >= m0={m0}")
    n = k.shape[0]
    total_iters = 0

    if tau <= 0.0:
        # No removal is ever possible; clustering would loop to the budget.
        warnings.warn("tau <= 0: no token can be retired, flagging layer as hard to compress")
        base = stage0 if stage0 is not None else kmeans(k, min(m0, n), seed, max_iter, tol)
        return ClusterModel(
            centers=base.centers,
            assignments=base.assignments,
            counts=base.counts,
            flag_full=True,
            stage_count=1,
            n_iter=base.n_iter,
            stage_mse=[nearest_center_mse(k, base.centers)],
            tau=float(tau),
        )

    if stage_schedule is None:
        def stage_schedule(t, remaining, total):
            return m0 if t == 0 else max(STAGE_FLOOR, math.ceil(m0 * remaining / total))

    unassigned = np.arange(n)
    accumulated: list[np.ndarray] = []
    num_centers = 0
    flag_full = False
    stage_mse: list[float] = []
    t = 0
    while unassigned.size > 0:
        if num_centers >= n_max:
            flag_full = True
            break
        m_t = min(stage_schedule(t, unassigned.size, n), unassigned.size)
        if t == 0 and stage0 is not None and stage0.num_clusters == m_t:
            model_t = stage0
        else:
            model_t = kmeans(k[unassigned], m_t, seed + t, max_iter, tol)
        total_iters += model_t.n_iter
        dists = np.linalg.norm(
            k[unassigned] - model_t.centers[model_t.assignments], axis=1
        )
        accumulated.append(model_t.centers)
        num_centers += model_t.num_clusters
        unassigned = unassigned[dists >= tau]
        stage_mse.append(nearest_center_mse(k, np.concatenate(accumulated)))
        t += 1

    centers = np.concatenate(accumulated)
    labels, d = _assign(k, centers)
    # Drop centers that attracted no tokens; nobody's nearest center changes.
    counts = np.bincount(labels, minlength=centers.shape[0])
    keep = np.flatnonzero(counts > 0)
    remap = np.full(centers.shape[0], -1, dtype=np.int32)
    remap[keep] = np.arange(keep.size, dtype=np.int32)
    centers = centers[keep]
    labels = remap[labels]
    counts = counts[keep]
    return ClusterModel(
        centers=centers,
        assignments=labels,
        counts=counts.astype(np.int64),
        flag_full=flag_full,
        stage_count=t,
        n_iter=total_iters,
        stage_mse=stage_mse,
        tau=float(tau),
    )


def _davies_bouldin(x: np.ndarray, model: ClusterModel) -> float:
    """DB = (1/K) sum_i max_{j != i} (S_i + S_j) / M_ij."""
    c = model.num_clusters
    if c < 2:
        return 0.0
    centers = model.centers.astype(np.float64)
    dists = np.linalg.norm(x.astype(np.float64) - centers[model.assignments], axis=1)
    s = np.zeros(c)
    np.add.at(s, model.assignments, dists)
    s /= model.counts
    m = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    ratio = (s[:, None] + s[None, :]) / np.where(m > 0, m, np.inf)
    np.fill_diagonal(ratio, -np.inf)
    return float(ratio.max(axis=1).mean())


def compactness(k_heads, models) -> CompactnessReport:
    """Per-layer compactness from per-head clusterings.

    MSE of a head is the mean squared token-to-assigned-center distance;
    the layer score is 1 / mean-over-heads MSE (inf when exactly zero).
    The Davies-Bouldin index is averaged over heads.
    """
    if len(k_heads) != len(models):
        raise ParameterError(f"{len(k_heads)} key tensors but {len(models)} models")
    mse_per_head = []
    db_per_head = []
    for x, model in zip(k_heads, models):
        x = as_f32(x)
        diffs = x.astype(np.float64) - model.centers[model.assignments].astype(np.float64)
        mse_per_head.append(float((diffs ** 2).sum(axis=1).mean()))
        db_per_head.append(_davies_bouldin(x, model))
    mse_layer = float(np.mean(mse_per_head))
    comp = math.inf if mse_layer == 0.0 else 1.0 / mse_layer
    return CompactnessReport(
        mse_per_head=mse_per_head,
        mse_layer=mse_layer,
        comp=comp,
        db_index=float(np.mean(db_per_head)),
    )
