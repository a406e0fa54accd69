"""Command-line front end.

Subcommands
-----------
run               full pipeline from a study config to an output directory
indices           nominal indices only (no robustness post-processing)
report            summary table and optional SVG figures from a finished run
sample-perturbed  draw samples from an extremal perturbed distribution

Exit codes: 2 configuration error, 3 model evaluation failure, 4 numerical
failure (zero output variance).
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import study as study_mod
from .errors import ConfigError, ModelEvaluationError, ZeroVarianceError
from .perturb import PerturbedDensity, sample_perturbed_marginal, solve_optimal_direction
from .frechet import build_table


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except ModelEvaluationError as exc:
            click.echo(f"model error: {exc}", err=True)
            sys.exit(3)
        except ZeroVarianceError as exc:
            click.echo(f"numerical error: {exc}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
def main():
    """Sobol' sensitivity indices with distributional robustness analysis."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", default=None, type=int)
@_exit_codes
def run(config_path, out_dir, seed):
    """Run the full pipeline and write all output files."""
    config = study_mod.load_config(config_path)
    report = study_mod.run_study(config, out_dir=out_dir, seed=seed)
    out = Path(out_dir or config.out_dir or "sobol_robust_out")
    click.echo(f"run complete: {out}")
    order = np.argsort(report.estimates.T)[::-1]
    for k in order:
        click.echo(
            f"  T{k + 1} = {report.estimates.T[k]:.4f} "
            f"[{report.envelope_min_T[k]:.4f}, {report.envelope_max_T[k]:.4f}]"
        )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int)
@_exit_codes
def indices(config_path, seed):
    """Compute nominal indices only and print them as JSON."""
    config = study_mod.load_config(config_path)
    _, estimates = study_mod.run_indices(config, seed=seed)
    click.echo(json.dumps(study_mod.indices_document(estimates), indent=1))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--svg", is_flag=True, default=False)
@_exit_codes
def report(out_dir, svg):
    """Print a ranked robustness summary; optionally render SVG figures."""
    out = Path(out_dir)
    indices_path = out / "indices.json"
    robustness_path = out / "robustness.json"
    if not indices_path.exists() or not robustness_path.exists():
        raise ConfigError(f"{out}: missing indices.json or robustness.json")
    with open(robustness_path) as fh:
        doc = json.load(fh)
    nominal_T = np.array(doc["nominal"]["T"])
    env_min = np.array(doc["envelope_min_T"])
    env_max = np.array(doc["envelope_max_T"])
    click.echo(f"{'rank':>4} {'index':>6} {'nominal':>9} {'min':>9} {'max':>9}")
    for rank, k in enumerate(np.argsort(nominal_T)[::-1], start=1):
        click.echo(
            f"{rank:>4} {'T' + str(k + 1):>6} {nominal_T[k]:>9.4f} "
            f"{env_min[k]:>9.4f} {env_max[k]:>9.4f}"
        )
    empty = [
        f"{t['index_type']}{t['k']}"
        for t in doc["targets"]
        if not any(t["accepted"])
    ]
    if empty:
        click.echo(f"no admissible delta for: {', '.join(empty)} "
                   "(envelope equals nominal)")
    if svg:
        config = study_mod.StudyConfig.from_dict(
            json.load(open(out / "run_manifest.json"))["config"]
        )
        from . import figures

        for path in figures.render_all(out, doc, config.tau):
            click.echo(f"wrote {path}")


@main.command("sample-perturbed")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--target", required=True, help="index target, e.g. T:2 or S:1")
@click.option("--sign", required=True, type=click.Choice(["max", "min"]))
@click.option("-n", "count", required=True, type=int)
@click.option("--seed", default=0, type=int)
@_exit_codes
def sample_perturbed(out_dir, target, sign, count, seed):
    """Sample the perturbed distribution extremizing one index."""
    try:
        index_type, k_str = target.split(":")
        k = int(k_str) - 1
        if index_type not in ("S", "T"):
            raise ValueError
    except ValueError:
        raise ConfigError(f"invalid target '{target}', expected S:k or T:k")
    if count < 1:
        raise ConfigError("-n must be >= 1")
    _, margins, partition, bundle, robustness = study_mod.load_run(out_dir)
    if not 0 <= k < bundle.p:
        raise ConfigError(f"target coordinate out of range: {target}")
    entry = next(
        t for t in robustness["targets"]
        if t["index_type"] == index_type and t["k"] == k + 1
    )
    values = np.array(
        [row[k] for row in entry[f"perturbed_{index_type}"]], dtype=float
    )
    accepted = np.array(entry["accepted"], dtype=bool) & np.isfinite(values)
    if not accepted.any():
        raise ZeroVarianceError(f"no admissible delta for target {target}")
    idx = np.flatnonzero(accepted)
    best = idx[np.argmax(values[idx]) if sign == "max" else np.argmin(values[idx])]
    delta = float(entry["delta_grid"][best])

    table = build_table(bundle, margins, partition)
    plan = solve_optimal_direction(table, margins, partition, index_type, k)
    pd = PerturbedDensity(plan, delta, margins)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    samples = np.column_stack(
        [
            m.from_unit(sample_perturbed_marginal(pd, i, count, rng))
            for i, m in enumerate(margins)
        ]
    )
    path = Path(out_dir) / "perturbed_samples.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(samples.shape[1])])
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])
    click.echo(f"wrote {count} samples (delta = {delta:.4g}) to {path}")


if __name__ == "__main__":
    main()
