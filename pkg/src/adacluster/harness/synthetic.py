"""Synthetic per-layer workloads: compact, dispersed, and mixed key fields.

Compact layers draw keys from a handful of well-separated Gaussian
components; dispersed layers use heavy-tailed (Student-t, df=2) tokens
that resist clustering.  Queries are aligned with a subset of the key
components and then re-scaled by log-normal factors so that raw-space
clustering is harder than angle clustering.  Later steps apply a small
Gaussian drift to every token, modelling the gradual cross-step movement
of token distributions.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .config import LayerSpec

__all__ = ["gen_synthetic"]

def _component_means(rng, g, d, separation):
    means = rng.normal(size=(g, d))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    return means


def _keys(rng, spec: LayerSpec, L, D):
    g = spec.gaussian_components
    means = _component_means(rng, g, D, spec.component_separation)
    if spec.kind == "compact":
        comp = rng.integers(g, size=L)
        k = means[comp] + spec.component_sigma * rng.normal(size=(L, D))
    elif spec.kind == "dispersed":
        k = rng.standard_t(2, size=(L, D))
    else:  # mixed: mostly clustered tokens with a heavy-tailed minority
        n_tail = L // 4
        comp = rng.integers(g, size=L - n_tail)
        body = means[comp] + spec.component_sigma * rng.normal(size=(L - n_tail, D))
        tail = rng.standard_t(2, size=(n_tail, D))
        k = np.concatenate([body, tail])
        rng.shuffle(k, axis=0)
    return k.astype(np.float32), means


def _queries(rng, spec: LayerSpec, means, L, D):
    if spec.kind == "dispersed":
        q = rng.normal(size=(L, D))
    else:
        g = means.shape[0]
        n_active = max(1, g // 4)
        active = rng.choice(g, size=n_active, replace=False)
        comp = active[rng.integers(n_active, size=L)]
        q = means[comp] + spec.component_sigma * rng.normal(size=(L, D))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = rng.lognormal(mean=0.0, sigma=spec.scale_spread, size=(L, 1))
    return (q * scales).astype(np.float32)


def gen_synthetic(spec: LayerSpec, L: int, D: int, H: int, steps: int, seed: int):
    """Generate ``out[step][head] = (q, k, v)`` f32 tensors of shape [L, D]."""
    if L < 1 or D < 1 or H < 1 or steps < 1:
        raise ParameterError("gen_synthetic requires positive L, D, H, steps")
    problems = spec.validate()
    if problems:
        raise ParameterError("; ".join(problems))
    rng = np.random.default_rng(seed)
    heads = []
    for _ in range(H):
        k, means = _keys(rng, spec, L, D)
        q = _queries(rng, spec, means, L, D)
        v = rng.normal(size=(L, D)).astype(np.float32)
        heads.append((q, k, v))

    out = [heads]
    for _ in range(1, steps):
        prev = out[-1]
        stepped = []
        for q, k, v in prev:
            rms = float(np.sqrt((k.astype(np.float64) ** 2).mean()))
            sigma = spec.drift_sigma * rms
            if sigma > 0:
                q = q + sigma * rng.normal(size=q.shape).astype(np.float32)
                k = k + sigma * rng.normal(size=k.shape).astype(np.float32)
                v = v + sigma * rng.normal(size=v.shape).astype(np.float32)
            stepped.append((q.astype(np.float32), k.astype(np.float32), v.astype(np.float32)))
        out.append(stepped)
    return out
