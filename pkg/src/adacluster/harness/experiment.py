"""Experiment execution and reporting.

``run_experiment`` executes full attention and the configured sparse
pipeline on identical inputs, measures per-layer error metrics, recall,
density, and FLOP counts, and writes ``report.json`` plus per-layer CSV
rows (and optional figures) to the output directory.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from ..clustering import compactness
from ..pipeline import PipelineParams, run_denoise_steps
from ..quest import build_envelopes
from ..reference import compare_outputs, exact_topk_keys, full_attention
from .config import ExperimentConfig
from .dump import ingest_dump
from .synthetic import gen_synthetic

__all__ = ["run_experiment", "analyze_inputs", "pca_project", "load_inputs",
           "CSV_COLUMNS", "bench_wallclock"]

CSV_COLUMNS = [
    "step", "layer", "head", "mode", "C", "density", "rel_l2", "cosine",
    "snr_db", "recall_at_k", "mse_layer", "comp", "db_index",
    "flops_full", "flops_sparse", "flops_overhead", "est_speedup",
]


def pipeline_params(cfg: ExperimentConfig) -> PipelineParams:
    return PipelineParams(
        q_clusters=cfg.q_clusters,
        topk=cfg.topk,
        tau_factor=cfg.tau_factor,
        m0=cfg.m0,
        n_max=cfg.n_max,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        scorer=cfg.scorer,
        full_layer_quota=cfg.full_layer_quota,
        uniform_key_clusters=cfg.uniform_key_clusters,
    )


def load_inputs(cfg: ExperimentConfig, input_dir=None):
    """Synthetic generation from the config, or dump ingestion.

    Returns ``inputs[step][layer][head] = (q, k, v)``.
    """
    if input_dir is not None:
        return ingest_dump(input_dir)
    per_layer = [
        gen_synthetic(spec, cfg.seq_len, cfg.head_dim, cfg.heads, cfg.steps,
                      cfg.seed + 104729 * l)
        for l, spec in enumerate(cfg.layers)
    ]
    # regroup [layer][step][head] -> [step][layer][head]
    return [[per_layer[l][t] for l in range(len(cfg.layers))] for t in range(cfg.steps)]


def default_recall_k(cfg: ExperimentConfig, num_clusters: int, L: int) -> int:
    if cfg.recall_k is not None:
        return max(1, min(cfg.recall_k, L))
    mean_cluster_size = L / max(1, num_clusters)
    return max(1, min(L, int(max(16, round(cfg.topk * mean_cluster_size / 4)))))


def _head_recall(q, k, hs, cfg: ExperimentConfig, rng) -> float:
    """Mean recall of the gathered key set against the exact top-k oracle."""
    L = q.shape[0]
    if hs.mode == "full" or hs.selection is None:
        return 1.0
    kk = default_recall_k(cfg, hs.num_key_clusters, L)
    env = build_envelopes(k, hs.key_model)
    gathered = []
    for g in range(hs.selection.selected.shape[0]):
        toks = np.concatenate([env.members(int(c)) for c in hs.selection.selected[g]])
        gathered.append(set(int(i) for i in toks))
    n_sample = min(cfg.recall_queries, L)
    sample = rng.choice(L, size=n_sample, replace=False)
    q_assign = hs.q_model.assignments
    recalls = []
    for qi in sample:
        exact = exact_topk_keys(q[qi], k, kk)
        got = gathered[int(q_assign[qi])]
        recalls.append(sum(1 for i in exact if int(i) in got) / kk)
    return float(np.mean(recalls))


def _jsonable(x):
    if isinstance(x, float):
        if math.isinf(x):
            return None  # +/- inf sentinel; JSON has no literal for it
        if math.isnan(x):
            return None
        return x
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def run_experiment(cfg: ExperimentConfig, out_dir, input_dir=None,
                   render_figures: bool = True) -> dict:
    """Execute the experiment and write report.json + layers.csv (+ figures)."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(cfg, input_dir)

    t0 = time.perf_counter()
    result = run_denoise_steps(inputs, pipeline_params(cfg), seed=cfg.seed)
    sparse_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    refs = [
        [[full_attention(q, k, v) for q, k, v in layer] for layer in layers]
        for layers in inputs
    ]
    full_seconds = time.perf_counter() - t0

    # Layer compactness from the step-0 clusterings.
    comp_reports = []
    for l, layer in enumerate(inputs[0]):
        models = [result.stats[0][l][h].key_model for h in range(len(layer))]
        ks = [k for _, k, _ in layer]
        comp_reports.append(compactness(ks, models))

    rng = np.random.default_rng(cfg.seed + 1)
    rows = []
    for t, layers in enumerate(inputs):
        for l, layer in enumerate(layers):
            comp = comp_reports[l]
            for h, (q, k, v) in enumerate(layer):
                hs = result.stats[t][l][h]
                m = compare_outputs(refs[t][l][h], result.outputs[t][l][h])
                recall = _head_recall(q, k, hs, cfg, rng)
                rows.append({
                    "step": t, "layer": l, "head": h,
                    "mode": hs.mode,
                    "C": hs.num_key_clusters,
                    "density": hs.density,
                    "rel_l2": m.rel_l2,
                    "cosine": m.cosine_sim,
                    "snr_db": m.snr_db,
                    "recall_at_k": recall,
                    "mse_layer": result.mse_layer[l],
                    "comp": comp.comp,
                    "db_index": comp.db_index,
                    "flops_full": hs.flops_full,
                    "flops_sparse": hs.flops_sparse,
                    "flops_overhead": hs.flops_overhead,
                    "est_speedup": hs.est_speedup,
                })

    flops_full = sum(r["flops_full"] for r in rows)
    flops_sparse = sum(r["flops_sparse"] for r in rows)
    flops_overhead = sum(r["flops_overhead"] for r in rows)
    totals = {
        "mean_rel_l2": float(np.mean([r["rel_l2"] for r in rows])),
        "mean_cosine": float(np.mean([r["cosine"] for r in rows])),
        "mean_recall_at_k": float(np.mean([r["recall_at_k"] for r in rows])),
        "mean_density": float(np.mean([r["density"] for r in rows])),
        "flops_full": flops_full,
        "flops_sparse": flops_sparse,
        "flops_overhead": flops_overhead,
        "est_speedup": flops_full / (flops_sparse + flops_overhead),
        "full_layers": sum(1 for p in result.policies if p.mode == "full"),
        "sparse_layers": sum(1 for p in result.policies if p.mode == "sparse"),
    }
    report = {
        "config": cfg.to_dict(),
        "layers": _jsonable(rows),
        "totals": _jsonable(totals),
        "timing": {"sparse_seconds": sparse_seconds, "full_seconds": full_seconds},
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    with open(out_dir / "layers.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    if render_figures:
        from . import figures
        figures.render_run_figures(rows, out_dir)
    return report


def pca_project(tokens: np.ndarray, max_samples: int = 4096, seed: int = 0):
    """2-component PCA via exact covariance eigendecomposition.

    Tokens beyond ``max_samples`` are subsampled deterministically.
    Returns (coords [n, 2], explained eigenvalues [2]).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape[0] > max_samples:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(tokens.shape[0], size=max_samples, replace=False))
        tokens = tokens[idx]
    centered = tokens - tokens.mean(axis=0)
    cov = centered.T @ centered / max(1, centered.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    top = np.argsort(evals)[::-1][:2]
    coords = centered @ evecs[:, top]
    return coords.astype(np.float32), evals[top]


def analyze_inputs(cfg: ExperimentConfig, out_dir, input_dir=None,
                   render_figures: bool = True) -> dict:
    """Compactness + Davies-Bouldin per layer, plus PCA projection export."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(cfg, input_dir)
    params = pipeline_params(cfg)

    from ..clustering import compute_tau, kmeans, multi_stage_cluster_keys

    summary = []
    pca_paths = []
    for l, layer in enumerate(inputs[0]):
        models = []
        ks = []
        for h, (q, k, v) in enumerate(layer):
            m0 = min(params.m0, k.shape[0])
            stage0 = kmeans(k, m0, cfg.seed + 7919 * l + h, params.max_iter, params.tol)
            tau = compute_tau(k, stage0, params.tau_factor)
            models.append(multi_stage_cluster_keys(
                k, tau, params.n_max, m0, cfg.seed + 7919 * l + h,
                params.max_iter, params.tol, stage0=stage0,
            ))
            ks.append(k)
        rep = compactness(ks, models)
        summary.append({
            "layer": l,
            "mse_layer": rep.mse_layer,
            "comp": rep.comp,
            "db_index": rep.db_index,
            "num_clusters": [m.num_clusters for m in models],
            "flag_full": [bool(m.flag_full) for m in models],
        })
        coords, _ = pca_project(layer[0][1], seed=cfg.seed)
        path = out_dir / f"pca_layer{l}.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "y"])
            writer.writerows([[float(a), float(b)] for a, b in coords])
        pca_paths.append(path)

    out = {"config": cfg.to_dict(), "layers": _jsonable(summary)}
    (out_dir / "analysis.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    if render_figures:
        from . import figures
        figures.render_analysis_figures(summary, pca_paths, out_dir)
    return out


def bench_wallclock(cfg: ExperimentConfig, repeats: int = 5) -> dict:
    """Median wall-clock of one full-attention step vs one sparse step."""
    cfg.validate()
    inputs = load_inputs(cfg, None)
    layer0 = [inputs[0][0]]
    full_times = []
    sparse_times = []
    params = pipeline_params(cfg)
    params.full_layer_quota = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        for q, k, v in layer0[0]:
            full_attention(q, k, v)
        full_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        run_denoise_steps([layer0], params, seed=cfg.seed)
        sparse_times.append(time.perf_counter() - t0)
    full_s = float(np.median(full_times))
    sparse_s = float(np.median(sparse_times))
    return {
        "seq_len": cfg.seq_len,
        "full_seconds": full_s,
        "sparse_seconds": sparse_s,
        "speedup": full_s / sparse_s,
    }
