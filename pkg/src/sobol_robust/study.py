"""Study configuration and batch pipeline orchestration.

A study is described by a single JSON document (model, marginals, sample
count, partition, scan parameters, seed).  ``run_study`` executes the whole
pipeline — design, model evaluation, index estimation, derivative table,
robustness scan — and writes machine-readable outputs into a directory:

* ``bundle.json``              the design and all model evaluations
* ``indices.json``             nominal indices with bootstrap stds
* ``derivatives.csv``          the derivative table
* ``robustness.json``          scans and min/max envelopes
* ``delta_scan.csv``           flat (target, delta, Delta, accepted) rows
* ``perturbed_marginals.csv``  binned masses of the extremal perturbed marginals
* ``run_manifest.json``        config echo, version, seed, evaluation counter

All randomness flows from the single configured seed through documented
substreams, so a rerun with the same config is byte-identical.  Every file is
written atomically (write-temp-then-rename).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .design import evaluate_model, generate_design, load_bundle, save_bundle
from .errors import ConfigError
from .estimators import DEFAULT_BOOTSTRAP_REPLICATES
from .frechet import save_table_csv
from .margins import Partition, build_quantile_partition, marginal_from_spec
from .models import model_from_spec
from .perturb import (
    DEFAULT_GRID_STEPS,
    DEFAULT_TAU,
    PerturbedDensity,
    run_robustness,
)

HISTOGRAM_BINS = 50


@dataclass
class StudyConfig:
    model: dict
    margins: list
    N: int
    partition: dict
    tau: float
    r: int
    n_bootstrap: int
    seed: int
    out_dir: str | None
    raw: dict

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if doc.get("version") != 1:
            raise ConfigError("config 'version' must be 1")
        for key in ("model", "margins", "N"):
            if key not in doc:
                raise ConfigError(f"config is missing '{key}'")
        N = doc["N"]
        if not isinstance(N, int) or N < 2:
            raise ConfigError("N must be >= 2")
        margins = doc["margins"]
        if not isinstance(margins, list) or not margins:
            raise ConfigError("'margins' must be a non-empty list")
        r = doc.get("r", DEFAULT_GRID_STEPS)
        if not isinstance(r, int) or r < 2:
            raise ConfigError("r must be an integer >= 2")
        tau = doc.get("tau", DEFAULT_TAU)
        if tau == "unbounded":
            tau = float("inf")
        elif not isinstance(tau, (int, float)) or tau <= 1:
            raise ConfigError("tau must be > 1 or the string 'unbounded'")
        n_bootstrap = doc.get("bootstrap_replicates", DEFAULT_BOOTSTRAP_REPLICATES)
        if not isinstance(n_bootstrap, int) or n_bootstrap < 2:
            raise ConfigError("bootstrap_replicates must be an integer >= 2")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        return cls(
            model=doc["model"],
            margins=margins,
            N=N,
            partition=doc.get("partition", {"M": 10}),
            tau=float(tau),
            r=r,
            n_bootstrap=n_bootstrap,
            seed=seed,
            out_dir=doc.get("out"),
            raw=doc,
        )


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return StudyConfig.from_dict(doc)


def build_study(config):
    """Instantiate margins, partition, and model from a validated config."""
    margins = [marginal_from_spec(spec) for spec in config.margins]
    partition_spec = config.partition
    if "edges" in partition_spec:
        partition = Partition(partition_spec["edges"])
    elif "M_per_coordinate" in partition_spec:
        partition = build_quantile_partition(margins, partition_spec["M_per_coordinate"])
    else:
        partition = build_quantile_partition(margins, int(partition_spec.get("M", 10)))
    if partition.p != len(margins):
        raise ConfigError(
            f"partition has {partition.p} coordinates but {len(margins)} margins given"
        )
    ranges = [(m.lo, m.hi) for m in margins]
    model = model_from_spec(config.model, ranges)
    if model.p != len(margins):
        raise ConfigError(
            f"model dimension {model.p} does not match {len(margins)} margins"
        )
    return margins, partition, model


def _write_json(doc, path):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, str(path))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return _jsonable(x.item())
    return x


def indices_document(estimates):
    return {
        "S": _jsonable(estimates.S),
        "T": _jsonable(estimates.T),
        "stdS": _jsonable(estimates.stdS),
        "stdT": _jsonable(estimates.stdT),
        "varF": estimates.varF,
        "N": estimates.N,
        "p": estimates.p,
        "B_rep": estimates.n_bootstrap,
    }


def robustness_document(report):
    targets = []
    for scan in report.scans:
        targets.append(
            {
                "index_type": scan.plan.index_type,
                "k": scan.plan.k + 1,
                "delta_bar": scan.plan.delta_bar,
                "delta_weights": _jsonable(scan.plan.delta_weights),
                "delta_grid": _jsonable(scan.delta_grid),
                "Delta": _jsonable(scan.Delta),
                "accepted": _jsonable(scan.accepted),
                "perturbed_S": _jsonable(scan.S_pert),
                "perturbed_T": _jsonable(scan.T_pert),
            }
        )
    return {
        "targets": targets,
        "envelope_min_S": _jsonable(report.envelope_min_S),
        "envelope_max_S": _jsonable(report.envelope_max_S),
        "envelope_min_T": _jsonable(report.envelope_min_T),
        "envelope_max_T": _jsonable(report.envelope_max_T),
        "nominal": indices_document(report.estimates),
    }


def write_delta_scan_csv(report, path):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "delta", "Delta", "accepted"])
        for scan in report.scans:
            for delta, D, ok in zip(scan.delta_grid, scan.Delta, scan.accepted):
                writer.writerow(
                    [scan.plan.target_label, repr(float(delta)),
                     repr(float(D)) if np.isfinite(D) else "inf", int(ok)]
                )
    os.replace(tmp, str(path))


def write_perturbed_marginals_csv(report, margins, path, bins=HISTOGRAM_BINS):
    """Binned masses of the extremal perturbed marginals, per target and sign."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["target", "extremal_delta_sign", "coordinate", "bin_lo", "bin_hi", "mass"]
        )
        edges = np.linspace(0.0, 1.0, bins + 1)
        for scan in report.scans:
            for sign in ("max", "min"):
                try:
                    delta, _ = scan.extremal_delta(sign)
                except ValueError:
                    continue
                pd = PerturbedDensity(scan.plan, delta, margins)
                for i, m in enumerate(margins):
                    phys = m.from_unit(edges)
                    for b in range(bins):
                        mass = pd.interval_mass(i, edges[b], edges[b + 1])
                        writer.writerow(
                            [scan.plan.target_label, sign, i + 1,
                             repr(float(phys[b])), repr(float(phys[b + 1])),
                             repr(float(mass))]
                        )
    os.replace(tmp, str(path))


def _package_version():
    try:
        return version("sobol-robust")
    except PackageNotFoundError:
        return "unknown"


def run_study(config, out_dir=None, seed=None):
    """Execute the full pipeline and write all outputs; returns the report."""
    out = Path(out_dir or config.out_dir or "sobol_robust_out")
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        config.seed = seed
    margins, partition, model = build_study(config)

    design = generate_design(len(margins), config.N, margins, config.seed)
    bundle = evaluate_model(design, model)
    save_bundle(bundle, str(out / "bundle.json"))

    report = run_robustness(
        bundle,
        margins,
        partition,
        tau=config.tau,
        r=config.r,
        n_bootstrap=config.n_bootstrap,
        bootstrap_seed=config.seed,
    )
    _write_json(indices_document(report.estimates), out / "indices.json")
    save_table_csv(report.table, str(out / "derivatives.csv"))
    _write_json(robustness_document(report), out / "robustness.json")
    write_delta_scan_csv(report, out / "delta_scan.csv")
    write_perturbed_marginals_csv(report, margins, out / "perturbed_marginals.csv")
    manifest = {
        "config": config.raw,
        "package_version": _package_version(),
        "seed": config.seed,
        "model_evaluations": model.n_evals,
        "expected_evaluations": (len(margins) + 2) * config.N,
        "files": [
            "bundle.json", "indices.json", "derivatives.csv", "robustness.json",
            "delta_scan.csv", "perturbed_marginals.csv",
        ],
    }
    _write_json(manifest, out / "run_manifest.json")
    return report


def run_indices(config, seed=None):
    """Nominal pipeline only: design, evaluation, index estimation."""
    from .estimators import estimate_with_bootstrap

    if seed is not None:
        config.seed = seed
    margins, _, model = build_study(config)
    design = generate_design(len(margins), config.N, margins, config.seed)
    bundle = evaluate_model(design, model)
    estimates, _, _ = estimate_with_bootstrap(
        bundle, config.n_bootstrap, config.seed
    )
    return bundle, estimates


def load_run(out_dir):
    """Reload a completed run: (config, margins, partition, bundle, robustness doc)."""
    out = Path(out_dir)
    manifest_path = out / "run_manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{out}: no run_manifest.json (not a completed run)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = StudyConfig.from_dict(manifest["config"])
    margins, partition, _ = build_study(config)
    bundle = load_bundle(str(out / "bundle.json"))
    with open(out / "robustness.json") as fh:
        robustness = json.load(fh)
    return config, margins, partition, bundle, robustness
