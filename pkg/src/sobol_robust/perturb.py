"""Optimal density perturbations and perturbed (reweighted) Sobol' indices.

For a chosen target index, the perturbation direction maximizing the
linearized index change subject to the density-ratio norm bound has a closed
form: on each partition cell the coefficient is the cell infimum of the
nominal density times the sign of the corresponding derivative entry.
Coordinates are weighted by their share of total derivative magnitude, and
the admissible magnitude bound keeps every perturbed marginal nonnegative.

Perturbed indices are computed by reweighting the existing model evaluations
with perturbed-to-nominal density ratios; the scan over perturbation sizes
accepts those whose worst-case bootstrap-spread inflation stays below a
threshold.  No stage here evaluates the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroVarianceError
from .estimators import (
    estimate_with_bootstrap,
    indices_from_means,
    replicate_indices,
    row_terms,
)
from .frechet import build_table, indicator_weights

DEFAULT_TAU = 1.5
DEFAULT_GRID_STEPS = 60

# Estimators whose nominal bootstrap std is below this fraction of the
# largest are excluded from the spread-ratio maximum: a near-zero index has
# meaningless spread ratios (0/0).
NEAR_ZERO_STD_FRACTION = 1e-3


@dataclass
class PerturbationPlan:
    """Optimal direction for one target index.

    ``coefficients[i]`` holds the per-cell direction coefficients of
    coordinate ``i``; ``delta_weights[i]`` is that coordinate's share of the
    total derivative magnitude; ``delta_bar`` bounds the admissible
    perturbation size.
    """

    index_type: str  # "S" or "T"
    k: int  # 0-based target coordinate
    coefficients: list  # per coordinate, array of length M_i
    delta_weights: np.ndarray  # (p,), sums to 1
    delta_bar: float
    partition: object

    @property
    def target_label(self):
        return f"{self.index_type}{self.k + 1}"


def solve_optimal_direction(table, margins, partition, index_type, k):
    """Closed-form solution of the linearized worst-case perturbation problem."""
    entries = (table.dS if index_type == "S" else table.dT)[k]
    coefficients = []
    abs_sums = np.empty(partition.p)
    for i, m in enumerate(margins):
        infima = np.array(
            [m.cell_infimum(*partition.cell(i, j)) for j in range(partition.n_cells[i])]
        )
        coefficients.append(infima * np.sign(entries[i]))
        abs_sums[i] = np.abs(entries[i]).sum()
    total = abs_sums.sum()
    if total == 0.0:
        raise ZeroVarianceError(
            f"index {index_type}{k + 1} is insensitive to all marginal perturbations"
        )
    delta_weights = abs_sums / total
    return PerturbationPlan(
        index_type=index_type,
        k=k,
        coefficients=coefficients,
        delta_weights=delta_weights,
        delta_bar=1.0 / delta_weights.max(),
        partition=partition,
    )


def single_direction_plan(partition, i, j):
    """Plan perturbing one cell of one coordinate with unit coefficient.

    Used to probe individual basis directions (e.g. finite-difference checks
    of the derivative table); not feasibility-constrained.
    """
    coefficients = [np.zeros(M) for M in partition.n_cells]
    coefficients[i][j] = 1.0
    delta_weights = np.zeros(partition.p)
    delta_weights[i] = 1.0
    return PerturbationPlan(
        index_type="S",
        k=0,
        coefficients=coefficients,
        delta_weights=delta_weights,
        delta_bar=1.0,
        partition=partition,
    )


class PerturbedDensity:
    """All perturbed marginals of one plan at a fixed perturbation size.

    Marginal ``i`` becomes ``(pdf_i + delta * w_i * bump_i) / z_i`` where
    ``bump_i`` is the plan's piecewise-constant direction and the normalizer
    ``z_i = 1 + delta * w_i * sum_j a_ij |cell_ij|`` is exact, so the
    perturbed marginal integrates to one by construction and is nonnegative
    for all admissible sizes.
    """

    def __init__(self, plan, delta, margins):
        if abs(delta) > plan.delta_bar * (1.0 + 1e-12):
            raise ValueError(
                f"|delta| = {abs(delta)} exceeds the admissible bound {plan.delta_bar}"
            )
        self.plan = plan
        self.delta = float(delta)
        self.margins = margins
        self.scale = delta * plan.delta_weights  # (p,)
        self.bump_integral = np.array(
            [
                float(np.dot(plan.coefficients[i], plan.partition.widths(i)))
                for i in range(plan.partition.p)
            ]
        )
        self.z = 1.0 + self.scale * self.bump_integral

    def pdf(self, i, x):
        """Perturbed density of marginal ``i`` at unit coordinates ``x``."""
        x = np.asarray(x, dtype=float)
        cells = self.plan.partition.cell_index(i, x)
        bump = self.plan.coefficients[i][cells]
        return (self.margins[i].pdf(x) + self.scale[i] * bump) / self.z[i]

    def ratio(self, i, x):
        """Perturbed-to-nominal density ratio of marginal ``i`` at ``x``."""
        x = np.asarray(x, dtype=float)
        cells = self.plan.partition.cell_index(i, x)
        bump = self.plan.coefficients[i][cells]
        return (1.0 + self.scale[i] * bump / self.margins[i].pdf(x)) / self.z[i]

    def _ratio_from_weights(self, i, cells, inv):
        bump = self.plan.coefficients[i][cells]
        return (1.0 + self.scale[i] * bump * inv) / self.z[i]

    def row_ratios(self, weights):
        """Per-coordinate ratios at all design samples: ``(rA, rB)``, each (p, N)."""
        rA = np.empty_like(weights.invA)
        rB = np.empty_like(weights.invB)
        for i in range(rA.shape[0]):
            rA[i] = self._ratio_from_weights(i, weights.cellA[i], weights.invA[i])
            rB[i] = self._ratio_from_weights(i, weights.cellB[i], weights.invB[i])
        return rA, rB

    def interval_mass(self, i, lo, hi):
        """Exact perturbed probability mass of the unit interval ``[lo, hi]``."""
        partition = self.plan.partition
        edges = partition.edges[i]
        nominal = self.margins[i].cell_mass(lo, hi)
        bump = 0.0
        for j in range(partition.n_cells[i]):
            olo = max(lo, edges[j])
            ohi = min(hi, edges[j + 1])
            if ohi > olo:
                bump += self.plan.coefficients[i][j] * (ohi - olo)
        return (nominal + self.scale[i] * bump) / self.z[i]

    def total_mass(self, i):
        return self.interval_mass(i, 0.0, 1.0)


def reweighted_indices(bundle, pd, weights, check_variance=True):
    """Perturbed indices by density-ratio reweighting; zero model evaluations."""
    rA, rB = pd.row_ratios(weights)
    uA = rA.prod(axis=0)
    uB = rB.prod(axis=0)
    termF, termG, termH2, termH1 = row_terms(bundle, uA, uB, rB)
    S, T, varF = indices_from_means(
        termF.mean(axis=1), termG.mean(axis=1), termH2.mean(), termH1.mean()
    )
    if check_variance and varF <= 0:
        raise ZeroVarianceError(
            "perturbation collapsed output variance estimate "
            "(delta too aggressive for this sample size)"
        )
    return S, T


@dataclass
class DeltaScanResult:
    """Scan of one plan over the admissible perturbation-size grid."""

    plan: PerturbationPlan
    delta_grid: np.ndarray  # (r + 1,)
    Delta: np.ndarray  # (r + 1,) worst-case spread ratio
    accepted: np.ndarray  # (r + 1,) bool
    S_pert: np.ndarray  # (r + 1, p)
    T_pert: np.ndarray  # (r + 1, p)

    def extremal_delta(self, sign):
        """Accepted grid point maximizing ('max') or minimizing ('min') the target."""
        values = (self.S_pert if self.plan.index_type == "S" else self.T_pert)[
            :, self.plan.k
        ]
        ok = self.accepted & np.isfinite(values)
        if not ok.any():
            raise ValueError(f"no admissible delta for target {self.plan.target_label}")
        idx = np.flatnonzero(ok)
        best = idx[np.argmax(values[idx]) if sign == "max" else np.argmin(values[idx])]
        return float(self.delta_grid[best]), int(best)


def delta_scan(
    bundle,
    plan,
    margins,
    weights,
    boot_weights,
    nominal_stds,
    tau=DEFAULT_TAU,
    r=DEFAULT_GRID_STEPS,
):
    """Evaluate perturbed indices and spread ratios on the size grid.

    ``nominal_stds`` is the length-2p concatenation of the nominal bootstrap
    stds (S then T), computed with the same ``boot_weights`` resamples.
    """
    if r < 2:
        raise ValueError("r must be >= 2")
    p = bundle.p
    include = nominal_stds >= NEAR_ZERO_STD_FRACTION * nominal_stds.max()
    grid = plan.delta_bar * (-1.0 + 2.0 * np.arange(r + 1) / r)
    Delta = np.empty(r + 1)
    S_pert = np.full((r + 1, p), np.nan)
    T_pert = np.full((r + 1, p), np.nan)
    for ell, delta in enumerate(grid):
        pd = PerturbedDensity(plan, delta, margins)
        rA, rB = pd.row_ratios(weights)
        uA = rA.prod(axis=0)
        uB = rB.prod(axis=0)
        termF, termG, termH2, termH1 = row_terms(bundle, uA, uB, rB)
        S, T, varF = indices_from_means(
            termF.mean(axis=1), termG.mean(axis=1), termH2.mean(), termH1.mean()
        )
        if varF <= 0 or not np.isfinite(varF):
            Delta[ell] = np.inf
            continue
        S_pert[ell] = S
        T_pert[ell] = T
        with np.errstate(divide="ignore", invalid="ignore"):
            S_rep, T_rep = replicate_indices(bundle, boot_weights, uA, uB, rB)
        stds = np.concatenate(
            [S_rep.std(axis=0, ddof=1), T_rep.std(axis=0, ddof=1)]
        )
        if not np.all(np.isfinite(stds[include])):
            Delta[ell] = np.inf
            continue
        Delta[ell] = float((stds[include] / nominal_stds[include]).max())
    # accept the contiguous sub-threshold run around delta = 0 only: isolated
    # dips back below tau far from 0 (after the ratio has already crossed it)
    # are bootstrap noise, and the accepted region should be an interval
    accepted = Delta <= tau
    anchor = int(np.argmin(np.abs(grid)))
    if accepted[anchor]:
        lo = anchor
        while lo > 0 and accepted[lo - 1]:
            lo -= 1
        hi = anchor
        while hi < r and accepted[hi + 1]:
            hi += 1
        accepted[:lo] = False
        accepted[hi + 1:] = False
    else:
        accepted[:] = False
    return DeltaScanResult(
        plan=plan,
        delta_grid=grid,
        Delta=Delta,
        accepted=accepted,
        S_pert=S_pert,
        T_pert=T_pert,
    )


@dataclass
class RobustnessReport:
    """Full robustness post-processing output.

    ``scans`` holds one :class:`DeltaScanResult` per target (S_k and T_k for
    every coordinate); envelopes are per-index min/max over the nominal
    values and every accepted perturbed index vector of every target's scan.
    """

    estimates: object
    table: object
    scans: list = field(default_factory=list)
    envelope_min_S: np.ndarray = None
    envelope_max_S: np.ndarray = None
    envelope_min_T: np.ndarray = None
    envelope_max_T: np.ndarray = None

    def scan_for(self, index_type, k):
        for scan in self.scans:
            if scan.plan.index_type == index_type and scan.plan.k == k:
                return scan
        raise KeyError(f"no scan for target {index_type}{k + 1}")


def run_robustness(
    bundle,
    margins,
    partition,
    tau=DEFAULT_TAU,
    r=DEFAULT_GRID_STEPS,
    n_bootstrap=64,
    bootstrap_seed=0,
):
    """Run the whole post-processing pipeline on an existing bundle."""
    estimates, _, boot_weights = estimate_with_bootstrap(
        bundle, n_bootstrap, bootstrap_seed
    )
    weights = indicator_weights(bundle, margins, partition)
    table = build_table(bundle, margins, partition, weights, estimates)
    nominal_stds = np.concatenate([estimates.stdS, estimates.stdT])
    report = RobustnessReport(estimates=estimates, table=table)
    for index_type in ("S", "T"):
        for k in range(bundle.p):
            try:
                plan = solve_optimal_direction(
                    table, margins, partition, index_type, k
                )
            except ZeroVarianceError:
                # index completely insensitive (e.g. an inert coordinate with
                # identically-zero derivative entries): nothing to scan
                continue
            scan = delta_scan(
                bundle, plan, margins, weights, boot_weights, nominal_stds, tau, r
            )
            report.scans.append(scan)
    env_min_S = estimates.S.copy()
    env_max_S = estimates.S.copy()
    env_min_T = estimates.T.copy()
    env_max_T = estimates.T.copy()
    for scan in report.scans:
        ok = scan.accepted & np.all(np.isfinite(scan.S_pert), axis=1)
        if ok.any():
            env_min_S = np.minimum(env_min_S, scan.S_pert[ok].min(axis=0))
            env_max_S = np.maximum(env_max_S, scan.S_pert[ok].max(axis=0))
            env_min_T = np.minimum(env_min_T, scan.T_pert[ok].min(axis=0))
            env_max_T = np.maximum(env_max_T, scan.T_pert[ok].max(axis=0))
    report.envelope_min_S = env_min_S
    report.envelope_max_S = env_max_S
    report.envelope_min_T = env_min_T
    report.envelope_max_T = env_max_T
    return report


def rejection_envelope_constant(pd, i):
    """Upper bound on the perturbed-to-nominal ratio of marginal ``i``.

    Computed from per-cell density infima: tight for positive-coefficient
    cells, and bounded by ``1 / z_i`` where the perturbation removes mass.
    """
    plan, m = pd.plan, pd.margins[i]
    best = 1.0
    for j in range(plan.partition.n_cells[i]):
        contrib = pd.scale[i] * plan.coefficients[i][j]
        if contrib > 0:
            inf_j = m.cell_infimum(*plan.partition.cell(i, j))
            best = max(best, 1.0 + contrib / inf_j)
    return best / pd.z[i]


def sample_perturbed_marginal(pd, i, n, rng):
    """Draw ``n`` samples of perturbed marginal ``i`` by rejection sampling.

    Proposals come from the nominal marginal; the expected number of
    proposals per accepted sample is the envelope constant.  At zero
    perturbation every proposal is accepted, so the output is exactly the
    proposal stream's samples.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c = rejection_envelope_constant(pd, i)
    out = np.empty(n)
    filled = 0
    while filled < n:
        remaining = n - filled
        batch = max(remaining, math.ceil(remaining * c))
        if filled > 0:
            batch = math.ceil(batch * 1.2) + 16
        proposals = pd.margins[i].sample(batch, rng)
        accept = rng.random(batch) * c <= pd.ratio(i, proposals)
        kept = proposals[accept][:remaining]
        out[filled : filled + kept.size] = kept
        filled += kept.size
    return out
