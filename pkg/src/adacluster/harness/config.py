"""Experiment configuration: JSON-serializable, round-trippable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..errors import ValidationError

LAYER_KINDS = ("compact", "dispersed", "mixed")
SCORERS = ("quest", "mean", "clamped")


@dataclass
class LayerSpec:
    """Synthetic key/query distribution for one layer."""
    kind: str = "compact"             # compact | dispersed | mixed
    gaussian_components: int = 8
    component_sigma: float = 0.1
    component_separation: float = 6.0  # norm of the component means
    drift_sigma: float = 0.0          # per-step Gaussian drift, relative to key RMS
    scale_spread: float = 0.5         # sigma of the log-normal query length factors

    def validate(self, where: str = "layer"):
        problems = []
        if self.kind not in LAYER_KINDS:
            problems.append(f"{where}.kind={self.kind!r} not in {LAYER_KINDS}")
        if self.gaussian_components < 1:
            problems.append(f"{where}.gaussian_components must be >= 1")
        if self.component_sigma < 0 or self.drift_sigma < 0 or self.scale_spread < 0:
            problems.append(f"{where}: sigmas must be >= 0")
        if self.component_separation <= 0:
            problems.append(f"{where}.component_separation must be > 0")
        return problems


@dataclass
class ExperimentConfig:
    layers: list = field(default_factory=lambda: [LayerSpec()])
    heads: int = 2
    seq_len: int = 1024
    head_dim: int = 32
    steps: int = 1
    q_clusters: int = 65
    topk: int = 64
    tau_factor: float = 1.5
    m0: int = 100
    n_max: int = 1000
    full_layer_quota: float = 0.15
    seed: int = 0
    scorer: str = "quest"
    max_iter: int = 25
    tol: float = 1e-4
    uniform_key_clusters: int | None = None   # AvgClus ablation when set
    recall_k: int | None = None               # default: max(16, topk*mean_cluster_size/4)
    recall_queries: int = 32                  # sampled queries per head for recall
    deterministic: bool = False

    def validate(self):
        problems = []
        if not self.layers:
            problems.append("layers must be non-empty")
        for i, spec in enumerate(self.layers):
            problems += spec.validate(f"layers[{i}]")
        for name in ("heads", "seq_len", "head_dim", "steps", "q_clusters", "topk", "m0"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.n_max < self.m0:
            problems.append(f"n_max={self.n_max} must be >= m0={self.m0}")
        if not 0.0 <= self.full_layer_quota <= 1.0:
            problems.append("full_layer_quota must be in [0, 1]")
        if self.scorer not in SCORERS:
            problems.append(f"scorer={self.scorer!r} not in {SCORERS}")
        if self.tau_factor <= 0:
            problems.append("tau_factor must be > 0")
        if problems:
            raise ValidationError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical serialization: sorted keys, fixed separators."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        layers = d.pop("layers", None)
        cfg = cls(**d)
        if layers is not None:
            specs = []
            for i, item in enumerate(layers):
                if isinstance(item, LayerSpec):
                    specs.append(item)
                    continue
                extra = set(item) - set(LayerSpec.__dataclass_fields__)
                if extra:
                    raise ValidationError(f"layers[{i}]: unknown fields {sorted(extra)}")
                specs.append(LayerSpec(**item))
            cfg.layers = specs
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config JSON must be an object")
        return cls.from_dict(data)
