"""Matplotlib rendering of report figures next to the CSV output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_run_figures", "render_analysis_figures"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_run_figures(rows, out_dir) -> list:
    """Per-layer error/density/compactness bar charts from run rows."""
    out_dir = Path(out_dir)
    step0 = [r for r in rows if r["step"] == 0]
    layers = sorted({r["layer"] for r in step0})

    def layer_mean(field):
        return [float(np.mean([r[field] for r in step0 if r["layer"] == l])) for l in layers]

    written = []
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].bar(layers, layer_mean("rel_l2"), color="tab:blue")
    axes[0].set_xlabel("layer")
    axes[0].set_ylabel("relative L2 error")
    axes[1].bar(layers, layer_mean("density"), color="tab:orange")
    axes[1].set_xlabel("layer")
    axes[1].set_ylabel("attended key density")
    path = out_dir / "error_density.png"
    _save(fig, path)
    written.append(path)

    comp = layer_mean("mse_layer")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(layers, comp, color="tab:green")
    ax.set_xlabel("layer")
    ax.set_ylabel("clustering MSE (lower = more compact)")
    path = out_dir / "compactness.png"
    _save(fig, path)
    written.append(path)
    return written


def render_analysis_figures(summary, pca_paths, out_dir) -> list:
    """Compactness bars plus a PCA scatter per layer."""
    out_dir = Path(out_dir)
    written = []
    layers = [s["layer"] for s in summary]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].bar(layers, [s["mse_layer"] for s in summary], color="tab:green")
    axes[0].set_xlabel("layer")
    axes[0].set_ylabel("clustering MSE")
    axes[1].bar(layers, [s["db_index"] for s in summary], color="tab:red")
    axes[1].set_xlabel("layer")
    axes[1].set_ylabel("Davies-Bouldin index")
    path = out_dir / "compactness.png"
    _save(fig, path)
    written.append(path)

    for s, pca_path in zip(summary, pca_paths):
        with open(pca_path) as f:
            reader = csv.reader(f)
            next(reader)
            pts = np.array([[float(a), float(b)] for a, b in reader])
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(pts[:, 0], pts[:, 1], s=2, alpha=0.4)
        ax.set_title(f"layer {s['layer']} key tokens (PCA)")
        path = out_dir / f"pca_layer{s['layer']}.png"
        _save(fig, path)
        written.append(path)
    return written
