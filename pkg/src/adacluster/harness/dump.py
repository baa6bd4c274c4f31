"""Tensor dump directory I/O.

Layout: ``<dir>/step<t>/layer<l>/head<h>/{q,k,v}.npy`` with [L, D] f32
arrays.  Ingestion validates the file format strictly and cross-checks
shapes across heads, layers, and steps.
"""

from __future__ import annotations

import re
from pathlib import Path

from ..errors import ContractError, FormatError
from ..npyio import read_npy, write_npy

__all__ = ["write_dump", "ingest_dump"]


def write_dump(directory, step_inputs) -> None:
    """Write ``step_inputs[step][layer][head] = (q, k, v)`` as a dump tree."""
    root = Path(directory)
    for t, layers in enumerate(step_inputs):
        for l, heads in enumerate(layers):
            for h, (q, k, v) in enumerate(heads):
                d = root / f"step{t}" / f"layer{l}" / f"head{h}"
                d.mkdir(parents=True, exist_ok=True)
                write_npy(d / "q.npy", q)
                write_npy(d / "k.npy", k)
                write_npy(d / "v.npy", v)


def _indexed_subdirs(parent: Path, prefix: str):
    pat = re.compile(rf"^{prefix}(\d+)$")
    found = {}
    for child in parent.iterdir():
        m = pat.match(child.name)
        if m and child.is_dir():
            found[int(m.group(1))] = child
    if not found:
        raise FormatError(f"{parent}: no {prefix}<n> subdirectories")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        raise FormatError(f"{parent}: non-contiguous {prefix} indices {indices}")
    return [found[i] for i in indices]


def ingest_dump(directory):
    """Read a dump tree back into ``out[step][layer][head] = (q, k, v)``."""
    root = Path(directory)
    if not root.is_dir():
        raise FormatError(f"{root}: not a directory")
    steps = _indexed_subdirs(root, "step")
    out = []
    ref_shapes = None
    for sd in steps:
        layers = []
        for ld in _indexed_subdirs(sd, "layer"):
            heads = []
            for hd in _indexed_subdirs(ld, "head"):
                tensors = []
                for name in ("q", "k", "v"):
                    path = hd / f"{name}.npy"
                    if not path.is_file():
                        raise FormatError(f"{path}: missing tensor file")
                    arr = read_npy(path)
                    if arr.ndim != 2:
                        raise FormatError(f"{path}: expected rank 2, got shape {arr.shape}")
                    tensors.append(arr)
                q, k, v = tensors
                if q.shape[1] != k.shape[1] or k.shape != v.shape:
                    raise ContractError(
                        f"{hd}: inconsistent q/k/v shapes {q.shape}, {k.shape}, {v.shape}"
                    )
                heads.append((q, k, v))
            layers.append(heads)
        shapes = [[(q.shape, k.shape, v.shape) for q, k, v in heads] for heads in layers]
        if ref_shapes is None:
            ref_shapes = shapes
        elif shapes != ref_shapes:
            raise ContractError(f"{sd}: shapes drift relative to step0")
        out.append(layers)
    return out
