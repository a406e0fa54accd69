"""Nominal first-order and total Sobol' index estimation.

From an evaluation bundle the estimators compute, for each coordinate ``k``::

    F_k = (1/N) sum_n fB[n] (fC[k][n] - fA[n])          # first-order numerator
    G_k = (1/(2N)) sum_n (fA[n] - fC[k][n])^2           # total-effect numerator
    H   = (1/N) sum_n fA[n]^2 - ((1/N) sum_n fA[n])^2   # output variance (A only)

    S_k = F_k / H      T_k = G_k / H

Monte Carlo noise can push estimates slightly outside [0, 1]; they are
reported unclipped (clipping would mask estimator breakdown, which the
robustness scan is designed to expose).

Estimator spread is quantified by bootstrap resampling: row indices are
resampled with replacement and the full row-triples (fA, fB, fC rows) move
together, so the same resample index sets can be reused verbatim for
perturbed (reweighted) estimators.  All replicate statistics are computed as
means of row-wise term arrays, which makes the nominal and perturbed paths
share one code path and keeps the perturbed-to-nominal spread ratio exactly 1
at zero perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVarianceError

DEFAULT_BOOTSTRAP_REPLICATES = 64


@dataclass
class SobolEstimates:
    """Nominal indices with bootstrap standard deviations."""

    S: np.ndarray  # (p,)
    T: np.ndarray  # (p,)
    varF: float
    stdS: np.ndarray | None
    stdT: np.ndarray | None
    N: int
    p: int
    n_bootstrap: int


def row_terms(bundle, uA=None, uB=None, ratioB=None):
    """Row-wise term arrays whose means yield the (optionally reweighted) indices.

    ``uA``/``uB`` are per-row products of perturbed-to-nominal density ratios
    over all coordinates of the ``A``/``B`` samples; ``ratioB[k]`` is the
    single-coordinate ratio at ``B[:, k]``.  All default to 1 (nominal case).

    Returns ``(termF, termG, termH2, termH1)`` with shapes
    ``(p, N), (p, N), (N,), (N,)``; ``termG`` includes the 1/2 factor.
    """
    fA, fB, fC = bundle.fA, bundle.fB, bundle.fC
    if uA is None:
        termF = fB * (fC - fA)
        termG = 0.5 * (fA - fC) ** 2
        termH2 = fA * fA
        termH1 = fA.copy()
    else:
        termF = (uA * uB * fB) * (fC - fA)
        termG = (0.5 * uA) * ratioB * (fA - fC) ** 2
        termH2 = uA * fA * fA
        termH1 = uA * fA
    return termF, termG, termH2, termH1


def indices_from_means(meanF, meanG, meanH2, meanH1):
    """Combine term means into (S, T, varF); variance may be <= 0 for replicates."""
    varF = meanH2 - meanH1**2
    with np.errstate(divide="ignore", invalid="ignore"):
        return meanF / varF, meanG / varF, varF


def estimate_indices(bundle):
    """Nominal indices from a bundle; raises on zero output variance."""
    if bundle.N < 2:
        raise ValueError("bundle must have N >= 2")
    termF, termG, termH2, termH1 = row_terms(bundle)
    S, T, varF = indices_from_means(
        termF.mean(axis=1), termG.mean(axis=1), termH2.mean(), termH1.mean()
    )
    if varF <= 0:
        raise ZeroVarianceError("zero output variance")
    return SobolEstimates(
        S=S, T=T, varF=float(varF), stdS=None, stdT=None,
        N=bundle.N, p=bundle.p, n_bootstrap=0,
    )


def resample_matrix(N, n_replicates, seed):
    """Bootstrap resample index sets and the matching row-averaging matrix.

    Returns ``(indices, weights)`` where ``indices`` is the
    ``(n_replicates, N)`` integer resample array and ``weights`` is the dense
    ``(n_replicates, N)`` matrix with ``weights @ term`` giving replicate
    means of any row-wise term array.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    indices = rng.integers(0, N, size=(n_replicates, N))
    weights = np.zeros((n_replicates, N))
    for r in range(n_replicates):
        counts = np.bincount(indices[r], minlength=N)
        weights[r] = counts / N
    return indices, weights


def replicate_indices(bundle, weights, uA=None, uB=None, ratioB=None):
    """Per-replicate (S, T) arrays of shape ``(n_replicates, p)``."""
    termF, termG, termH2, termH1 = row_terms(bundle, uA, uB, ratioB)
    meanF = termF @ weights.T  # (p, R)
    meanG = termG @ weights.T
    meanH2 = weights @ termH2  # (R,)
    meanH1 = weights @ termH1
    S, T, _ = indices_from_means(meanF, meanG, meanH2, meanH1)
    return S.T, T.T


def bootstrap_std(bundle, n_replicates=DEFAULT_BOOTSTRAP_REPLICATES, seed=0):
    """Bootstrap standard deviations of all 2p indices.

    Returns ``(stdS, stdT, indices, weights)``; the resample ``indices`` and
    averaging ``weights`` are returned so perturbed estimators can reuse the
    identical resamples (paired resamples stabilize spread ratios).
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    indices, weights = resample_matrix(bundle.N, n_replicates, seed)
    S_rep, T_rep = replicate_indices(bundle, weights)
    return (
        S_rep.std(axis=0, ddof=1),
        T_rep.std(axis=0, ddof=1),
        indices,
        weights,
    )


def estimate_with_bootstrap(
    bundle, n_replicates=DEFAULT_BOOTSTRAP_REPLICATES, seed=0
):
    """Nominal estimates with bootstrap stds filled in; also returns resamples."""
    est = estimate_indices(bundle)
    stdS, stdT, indices, weights = bootstrap_std(bundle, n_replicates, seed)
    est.stdS = stdS
    est.stdT = stdT
    est.n_bootstrap = n_replicates
    return est, indices, weights
