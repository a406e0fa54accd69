"""Plot-file rendering for the report command.

All figures are drawn purely from the run's data files (robustness.json,
delta_scan.csv, perturbed_marginals.csv); nothing is recomputed.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def envelope_figure(doc, index_type, path):
    """Nominal indices as bars with min/max envelope whiskers."""
    nominal = np.array(doc["nominal"][index_type])
    env_min = np.array(doc[f"envelope_min_{index_type}"])
    env_max = np.array(doc[f"envelope_max_{index_type}"])
    p = nominal.size
    x = np.arange(1, p + 1)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * p + 2), 3.2))
    ax.bar(x, nominal, color="tab:blue", width=0.6, label="nominal")
    ax.errorbar(
        x, nominal,
        yerr=[nominal - env_min, env_max - nominal],
        fmt="none", ecolor="black", capsize=4, label="envelope",
    )
    ax.set_xticks(x)
    ax.set_xlabel("input coordinate")
    ax.set_ylabel(f"{index_type} index")
    ax.set_title(f"{'First-order' if index_type == 'S' else 'Total'} indices "
                 "with perturbation envelopes")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def delta_scan_figure(scan_csv, tau, path):
    """Spread-ratio curves over the perturbation-size grid, one per target."""
    curves = defaultdict(list)
    with open(scan_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            D = float("inf") if row["Delta"] == "inf" else float(row["Delta"])
            curves[row["target"]].append((float(row["delta"]), D))
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for target, pts in sorted(curves.items()):
        pts = np.array(pts)
        delta_bar = np.abs(pts[:, 0]).max() or 1.0
        ax.plot(pts[:, 0] / delta_bar, pts[:, 1], lw=1, label=target)
    if np.isfinite(tau):
        ax.axhline(tau, color="black", ls="--", lw=1)
    ax.set_xlabel("delta / delta_bar")
    ax.set_ylabel("spread ratio")
    ax.set_ylim(bottom=0)
    if len(curves) <= 8:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def perturbed_marginals_figure(marginals_csv, target, path):
    """Binned perturbed marginal masses for one target, max vs min extremes."""
    rows = defaultdict(list)
    with open(marginals_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["target"] != target:
                continue
            rows[(int(row["coordinate"]), row["extremal_delta_sign"])].append(
                (float(row["bin_lo"]), float(row["bin_hi"]), float(row["mass"]))
            )
    coords = sorted({c for c, _ in rows})
    if not coords:
        return False
    fig, axes = plt.subplots(
        len(coords), 1, figsize=(5.0, 1.6 * len(coords)), sharex=False, squeeze=False
    )
    colors = {"max": "tab:red", "min": "tab:cyan"}
    for ax, c in zip(axes[:, 0], coords):
        for sign in ("max", "min"):
            bins = rows.get((c, sign))
            if not bins:
                continue
            lo = np.array([b[0] for b in bins])
            hi = np.array([b[1] for b in bins])
            mass = np.array([b[2] for b in bins])
            ax.stairs(mass / (hi - lo), np.append(lo, hi[-1]),
                      color=colors[sign], label=sign, fill=False)
        ax.set_ylabel(f"x{c}", rotation=0, labelpad=12)
    axes[0, 0].legend(frameon=False, fontsize=8)
    axes[0, 0].set_title(f"Extremal perturbed marginals for target {target}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def render_all(out_dir, doc, tau):
    """Write every figure type into ``out_dir/figures``; returns the paths."""
    out = Path(out_dir)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    paths = []
    for index_type in ("S", "T"):
        path = fig_dir / f"envelope_{index_type}.svg"
        envelope_figure(doc, index_type, path)
        paths.append(path)
    path = fig_dir / "delta_scan.svg"
    delta_scan_figure(out / "delta_scan.csv", tau, path)
    paths.append(path)
    # histogram figure for the target with the largest nominal total index
    nominal_T = np.array(doc["nominal"]["T"])
    target = f"T{int(np.argmax(nominal_T)) + 1}"
    path = fig_dir / f"perturbed_marginals_{target}.svg"
    if perturbed_marginals_figure(out / "perturbed_marginals.csv", target, path):
        paths.append(path)
    return paths
