"""Command line front end.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..errors import ContractError, FormatError, ParameterError, ValidationError
from .config import ExperimentConfig

EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


def _load_config(config_path) -> ExperimentConfig:
    if config_path is None:
        return ExperimentConfig()
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        raise FormatError(f"{config_path}: {exc}") from exc
    return ExperimentConfig.from_json(text)


def _limit_threads(threads):
    if threads is None:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=threads)
    except Exception:
        click.echo(f"warning: could not limit BLAS threads to {threads}", err=True)


def _run(fn):
    try:
        fn()
    except (ValidationError, ParameterError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (FormatError, ContractError, OSError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


@click.group()
def main():
    """Cluster-sparse attention benchmark harness."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Experiment config JSON.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Directory to write the synthetic dump into.")
def gen(config_path, out_dir):
    """Generate a synthetic tensor dump from the config's layer specs."""
    def body():
        from .dump import write_dump
        from .experiment import load_inputs
        cfg = _load_config(config_path)
        cfg.validate()
        inputs = load_inputs(cfg, None)
        write_dump(out_dir, inputs)
        click.echo(f"wrote synthetic dump to {out_dir}")
    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_dir", type=click.Path(), default=None,
              help="Tensor dump directory (default: synthetic from config).")
@click.option("--synthetic", is_flag=True, help="Force synthetic inputs.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--scorer", type=click.Choice(["quest", "mean", "clamped"]), default=None)
@click.option("--threads", type=int, default=None, help="Limit BLAS threads.")
@click.option("--deterministic", is_flag=True, help="Single-threaded, bit-reproducible.")
@click.option("--figures/--no-figures", default=True, help="Render PNG figures.")
def run(config_path, input_dir, synthetic, out_dir, scorer, threads, deterministic, figures):
    """Run full vs. sparse attention and write report.json + layers.csv."""
    def body():
        from .experiment import run_experiment
        cfg = _load_config(config_path)
        if scorer is not None:
            cfg.scorer = scorer
        if deterministic:
            cfg.deterministic = True
            _limit_threads(1)
        else:
            _limit_threads(threads)
        source = None if synthetic else input_dir
        report = run_experiment(cfg, out_dir, input_dir=source, render_figures=figures)
        click.echo(json.dumps(report["totals"], indent=2, sort_keys=True))
        click.echo(f"report written to {Path(out_dir) / 'report.json'}")
    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_dir", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--figures/--no-figures", default=True)
def analyze(config_path, input_dir, out_dir, figures):
    """Compactness, Davies-Bouldin, and PCA projection export only."""
    def body():
        from .experiment import analyze_inputs
        cfg = _load_config(config_path)
        out = analyze_inputs(cfg, out_dir, input_dir=input_dir, render_figures=figures)
        click.echo(json.dumps(out["layers"], indent=2, sort_keys=True))
    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seq-len", type=int, default=None, help="Override sequence length.")
@click.option("--repeats", type=int, default=5)
@click.option("--threads", type=int, default=None)
def bench(config_path, seq_len, repeats, threads):
    """Wall-clock one full-attention step vs one sparse step."""
    def body():
        from .experiment import bench_wallclock
        cfg = _load_config(config_path)
        _limit_threads(threads)
        if seq_len is not None:
            cfg.seq_len = seq_len
        out = bench_wallclock(cfg, repeats=repeats)
        click.echo(json.dumps(out, indent=2, sort_keys=True))
    _run(body)


if __name__ == "__main__":
    main()
