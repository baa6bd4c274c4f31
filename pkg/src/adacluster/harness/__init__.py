"""Benchmark harness: synthetic workloads, dump ingestion, experiments, CLI."""

from .config import ExperimentConfig, LayerSpec
from .dump import ingest_dump, write_dump
from .synthetic import gen_synthetic
