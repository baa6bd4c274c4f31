"""End-to-end cluster-sparse attention pipeline.

Step 0 of a run decides each layer's policy: queries are clustered on
the unit sphere, keys go through multi-stage clustering, and a layer
whose key set blows past the center budget is served by full attention.
Later steps keep cluster counts frozen and warm-start both clusterings
from the previous step's centers.  FLOP accounting mirrors the
mult-add = 2 convention throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    ClusterModel,
    cluster_queries,
    compute_tau,
    kmeans,
    multi_stage_cluster_keys,
    warm_start_update,
)
from .errors import ContractError, ParameterError
from .quest import (
    build_envelopes,
    mean_center_scores,
    select_topk_clusters,
    tensor_quest,
    tensor_quest_clamped_centers,
)
from .reference import full_attention
from .tensorops import as_f32

__all__ = [
    "PipelineParams",
    "LayerPolicy",
    "StepState",
    "HeadStats",
    "FlopCounts",
    "count_flops",
    "clustering_flops",
    "adacluster_attention",
    "run_denoise_steps",
    "DenoiseResult",
]

SCORERS = ("quest", "mean", "clamped")


@dataclass
class PipelineParams:
    q_clusters: int = 65
    topk: int = 64
    tau_factor: float = 1.5
    m0: int = 100
    n_max: int = 1000
    max_iter: int = 25
    tol: float = 1e-4
    scorer: str = "quest"
    full_layer_quota: float = 0.15
    # AvgClus ablation: skip multi-stage and use a fixed per-head k-means count.
    uniform_key_clusters: int | None = None

    def validate(self):
        if self.scorer not in SCORERS:
            raise ParameterError(f"unknown scorer {self.scorer!r}, expected one of {SCORERS}")
        if self.q_clusters < 1 or self.topk < 1 or self.m0 < 1 or self.n_max < self.m0:
            raise ParameterError("q_clusters, topk, m0 must be >= 1 and n_max >= m0")
        if not 0.0 <= self.full_layer_quota <= 1.0:
            raise ParameterError(f"full_layer_quota={self.full_layer_quota} not in [0, 1]")


@dataclass
class LayerPolicy:
    mode: str | None = None                 # "full" | "sparse"; fixed after step 0
    key_cluster_count: list = field(default_factory=list)   # per head, fixed after step 0
    tau: list = field(default_factory=list)                  # per head
    topk: int = 64
    q_clusters: int = 65


@dataclass
class StepState:
    """Per-head carry-over between denoising steps."""
    step: int = 0
    key_centers: np.ndarray | None = None
    query_centers: np.ndarray | None = None


@dataclass
class HeadStats:
    mode: str
    num_key_clusters: int
    density: float
    flops_full: float
    flops_sparse: float
    flops_overhead: float
    est_speedup: float
    key_iters: int = 0
    query_iters: int = 0
    selection: object = None
    key_model: ClusterModel | None = None
    q_model: ClusterModel | None = None


@dataclass
class FlopCounts:
    flops_full: float
    flops_sparse: float
    flops_overhead: float

    @property
    def est_speedup(self) -> float:
        return self.flops_full / (self.flops_sparse + self.flops_overhead)


def clustering_flops(n: int, c: int, d: int, iters: int) -> float:
    """2*N*C*D per Lloyd iteration (assignment distances dominate)."""
    return 2.0 * n * c * d * iters


def count_flops(L: int, D: int, C: int, Gq: int, density: float,
                kmeans_iters: int, mode: str) -> FlopCounts:
    """FLOP triple for one head: full, sparse, and overhead counts.

    Full attention is 4*L^2*D (scores plus weighted sum, mult-add = 2).
    Sparse scales the key side by density.  Overhead covers clustering,
    the envelope build (one compare per element, counted as a flop),
    and the clamped-matmul scoring.
    """
    if L < 1 or D < 1 or C < 1 or Gq < 1:
        raise ParameterError("count_flops requires positive sizes")
    flops_full = 4.0 * L * L * D
    if mode == "full":
        return FlopCounts(flops_full, flops_full, clustering_flops(L, C, D, kmeans_iters))
    flops_sparse = 4.0 * L * (density * L) * D
    overhead = clustering_flops(L, C, D, kmeans_iters) + L * D + 4.0 * Gq * C * D
    return FlopCounts(flops_full, flops_sparse, overhead)


def _score(scorer: str, q_reps, env, centers):
    if scorer == "quest":
        return tensor_quest(q_reps, env)
    if scorer == "mean":
        return mean_center_scores(q_reps, centers)
    if scorer == "clamped":
        return tensor_quest_clamped_centers(q_reps, centers)
    raise ParameterError(f"unknown scorer {scorer!r}")


def _gathered_attention(q, k, v, q_assign, selected, env):
    """Per query cluster, attend only over the gathered member tokens."""
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float32)
    order = np.argsort(q_assign, kind="stable")
    bounds = np.searchsorted(q_assign[order], np.arange(selected.shape[0] + 1))
    for g in range(selected.shape[0]):
        rows = order[bounds[g]:bounds[g + 1]]
        if rows.size == 0:
            continue
        toks = np.concatenate([env.members(int(c)) for c in selected[g]])
        out[rows] = full_attention(q[rows], k[toks], v[toks])
    return out


def _plan_head(q, k, params: PipelineParams, seed: int):
    """Step-0 clustering for one head; returns everything the policy needs."""
    n = k.shape[0]
    q_model, q_reps = cluster_queries(
        q, min(params.q_clusters, q.shape[0]), seed, params.max_iter, params.tol
    )
    if params.uniform_key_clusters is not None:
        c = min(params.uniform_key_clusters, n)
        key_model = kmeans(k, c, seed, params.max_iter, params.tol)
        tau = None
    else:
        m0 = min(params.m0, n)
        stage0 = kmeans(k, m0, seed, params.max_iter, params.tol)
        tau = compute_tau(k, stage0, params.tau_factor)
        key_model = multi_stage_cluster_keys(
            k, tau, params.n_max, m0, seed, params.max_iter, params.tol, stage0=stage0
        )
    return q_model, q_reps, key_model, tau


def _sparse_head(q, k, v, q_model, q_reps, key_model, topk, scorer):
    """Score, select, and attend over the gathered clusters for one head."""
    env = build_envelopes(k, key_model)
    scores = _score(scorer, q_reps, env, key_model.centers)
    topk_eff = min(topk, key_model.num_clusters)
    sel = select_topk_clusters(scores, topk_eff, key_model.counts)
    out = _gathered_attention(q, k, v, q_model.assignments, sel.selected, env)
    return out, sel, env


def _head_stats(mode, q, key_model, q_model, sel) -> HeadStats:
    L, D = q.shape
    c = key_model.num_clusters if key_model is not None else 1
    iters = (key_model.n_iter if key_model is not None else 0) + (
        q_model.n_iter if q_model is not None else 0
    )
    density = sel.density if sel is not None else 1.0
    gq = q_model.num_clusters if q_model is not None else 1
    fc = count_flops(L, D, c, gq, density, iters, mode)
    return HeadStats(
        mode=mode,
        num_key_clusters=c,
        density=density,
        flops_full=fc.flops_full,
        flops_sparse=fc.flops_sparse,
        flops_overhead=fc.flops_overhead,
        est_speedup=fc.est_speedup,
        key_iters=key_model.n_iter if key_model is not None else 0,
        query_iters=q_model.n_iter if q_model is not None else 0,
        selection=sel,
        key_model=key_model,
        q_model=q_model,
    )


def _carry_centers(k, key_model, state: StepState, params: PipelineParams):
    """Centers to carry into the next step, plus extra Lloyd iterations spent.

    Multi-stage centers are not a Lloyd fixed point (stages cluster
    disjoint residual subsets), so step 0 consolidates them once; that
    makes later warm starts on slowly drifting inputs converge in at
    most one iteration.
    """
    if state.step == 0:
        consolidated = warm_start_update(k, key_model.centers, params.max_iter, params.tol)
        return consolidated.centers, consolidated.n_iter
    return key_model.centers, 0


def adacluster_attention(q, k, v, policy: LayerPolicy, state: StepState,
                         seed: int, params: PipelineParams | None = None):
    """One head of the pipeline for one denoising step.

    At step 0 the clusterings run from scratch and freeze the policy
    (mode and cluster count); at later steps both clusterings warm-start
    from the centers carried in ``state``.  Returns (output, HeadStats).
    """
    params = params or PipelineParams()
    q, k, v = as_f32(q), as_f32(k), as_f32(v)
    if policy.mode == "full":
        state.step += 1
        return full_attention(q, k, v), _head_stats("full", q, None, None, None)

    if state.step == 0 or state.key_centers is None:
        q_model, q_reps, key_model, tau = _plan_head(q, k, params, seed)
        if key_model.flag_full:
            policy.mode = "full"
            state.step += 1
            stats = _head_stats("full", q, key_model, q_model, None)
            return full_attention(q, k, v), stats
        policy.mode = "sparse"
        policy.key_cluster_count = [key_model.num_clusters]
        policy.tau = [tau]
        policy.topk = params.topk
        policy.q_clusters = params.q_clusters
    else:
        key_model = warm_start_update(k, state.key_centers, params.max_iter, params.tol)
        q_model, q_reps = cluster_queries(
            q, max_iter=params.max_iter, tol=params.tol, init_centers=state.query_centers
        )

    out, sel, _ = _sparse_head(q, k, v, q_model, q_reps, key_model, policy.topk, params.scorer)
    stats = _head_stats("sparse", q, key_model, q_model, sel)
    state.key_centers, extra = _carry_centers(k, key_model, state, params)
    stats.key_iters += extra
    state.query_centers = q_model.centers
    state.step += 1
    return out, stats


@dataclass
class DenoiseResult:
    outputs: list          # [step][layer][head] -> [L, D] ndarray
    policies: list         # [layer] -> LayerPolicy
    stats: list            # [step][layer][head] -> HeadStats
    mse_layer: list        # [layer] step-0 mean-over-heads key clustering MSE


def _check_shapes(step_inputs):
    if not step_inputs or not step_inputs[0]:
        raise ParameterError("run_denoise_steps needs at least one step and one layer")
    ref = [[(q.shape, k.shape, v.shape) for q, k, v in layer] for layer in step_inputs[0]]
    for t, layers in enumerate(step_inputs):
        got = [[(q.shape, k.shape, v.shape) for q, k, v in layer] for layer in layers]
        if got != ref:
            raise ContractError(f"per-layer shapes at step {t} differ from step 0")


def run_denoise_steps(step_inputs, params: PipelineParams | None = None, seed: int = 0):
    """Run the pipeline over ``step_inputs[step][layer][head] = (q, k, v)``.

    Step 0 fixes each layer's policy: a layer is served by full attention
    if any head's multi-stage clustering overflowed the center budget, or
    if the layer falls in the worst ``full_layer_quota`` fraction by
    step-0 clustering MSE.  Later steps warm-start with frozen counts.
    """
    params = params or PipelineParams()
    params.validate()
    _check_shapes(step_inputs)
    n_layers = len(step_inputs[0])

    # Step-0 planning pass: cluster everything, then apply the full-attention quota.
    plans = []
    mse_layer = []
    flagged = []
    for l, layer in enumerate(step_inputs[0]):
        head_plans = [
            _plan_head(as_f32(q), as_f32(k), params, seed + 7919 * l + h)
            for h, (q, k, v) in enumerate(layer)
        ]
        plans.append(head_plans)
        mses = []
        for (q, k, v), (_, _, km, _) in zip(layer, head_plans):
            diffs = as_f32(k).astype(np.float64) - km.centers[km.assignments].astype(np.float64)
            mses.append(float((diffs ** 2).sum(axis=1).mean()))
        mse_layer.append(float(np.mean(mses)))
        flagged.append(any(p[2].flag_full for p in head_plans))

    n_forced = math.ceil(params.full_layer_quota * n_layers) if params.full_layer_quota > 0 else 0
    worst = sorted(range(n_layers), key=lambda l: (-mse_layer[l], l))[:n_forced]
    forced = set(worst)

    policies = []
    for l in range(n_layers):
        full = flagged[l] or l in forced
        policies.append(LayerPolicy(
            mode="full" if full else "sparse",
            key_cluster_count=[p[2].num_clusters for p in plans[l]],
            tau=[p[3] for p in plans[l]],
            topk=params.topk,
            q_clusters=params.q_clusters,
        ))

    states = [[StepState() for _ in layer] for layer in step_inputs[0]]
    outputs = []
    stats = []
    for t, layers in enumerate(step_inputs):
        step_out = []
        step_stats = []
        for l, layer in enumerate(layers):
            pol = policies[l]
            layer_out = []
            layer_stats = []
            for h, (q, k, v) in enumerate(layer):
                q, k, v = as_f32(q), as_f32(k), as_f32(v)
                st = states[l][h]
                if pol.mode == "full":
                    out = full_attention(q, k, v)
                    if t == 0:
                        _, _, km, _ = plans[l][h]
                        hs = _head_stats("full", q, km, plans[l][h][0], None)
                    else:
                        hs = _head_stats("full", q, None, None, None)
                else:
                    if t == 0:
                        q_model, q_reps, key_model, _ = plans[l][h]
                    else:
                        key_model = warm_start_update(
                            k, st.key_centers, params.max_iter, params.tol
                        )
                        q_model, q_reps = cluster_queries(
                            q, max_iter=params.max_iter, tol=params.tol,
                            init_centers=st.query_centers,
                        )
                    out, sel, _ = _sparse_head(
                        q, k, v, q_model, q_reps, key_model, pol.topk, params.scorer
                    )
                    hs = _head_stats("sparse", q, key_model, q_model, sel)
                    st.key_centers, extra = _carry_centers(k, key_model, st, params)
                    hs.key_iters += extra
                    st.query_centers = q_model.centers
                st.step += 1
                layer_out.append(out)
                layer_stats.append(hs)
            step_out.append(layer_out)
            step_stats.append(layer_stats)
        outputs.append(step_out)
        stats.append(step_stats)
    return DenoiseResult(outputs=outputs, policies=policies, stats=stats, mse_layer=mse_layer)
