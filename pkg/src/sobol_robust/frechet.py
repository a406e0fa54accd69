"""Directional derivatives of the Sobol' indices along density perturbations.

The perturbation space is spanned by indicator bumps: basis direction
``(i, j)`` perturbs marginal ``i`` on partition cell ``R_i^j`` only.  The
derivative of every index (S_k and T_k, all k) along every basis direction is
estimated from the existing evaluation bundle; no model evaluations are
performed here.

Per-sample indicator weights ``chi(cell) / pdf_i(sample)`` are the only data
needed from the samples.  Integrals that do not involve the model output
(the normalizer terms) equal exact cell widths analytically and are treated
as such, which makes two identities hold to round-off rather than just in
distribution:

* with uniform marginals, the derivative entries of any index sum to zero
  over the cells of any coordinate (scale invariance of the indices);
* each entry is the exact zero-perturbation slope of the corresponding
  reweighted index estimator restricted to that single direction.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .estimators import estimate_indices, row_terms


@dataclass
class SampleWeights:
    """Per-sample cell memberships and inverse nominal densities.

    ``cellA[i, n]`` is the partition cell of ``A[n, i]`` and
    ``invA[i, n] = 1 / pdf_i(A[n, i])``; likewise for ``B``.  The indicator
    weight for direction ``(i, j)`` at sample ``n`` is ``invA[i, n]`` when
    ``cellA[i, n] == j`` and zero otherwise.
    """

    cellA: np.ndarray  # (p, N) int
    cellB: np.ndarray
    invA: np.ndarray  # (p, N)
    invB: np.ndarray


def indicator_weights(bundle, margins, partition):
    """Evaluate cell memberships and inverse densities at all design samples."""
    A, B = bundle.design.A, bundle.design.B
    p, N = bundle.p, bundle.N
    cellA = np.empty((p, N), dtype=np.intp)
    cellB = np.empty((p, N), dtype=np.intp)
    invA = np.empty((p, N))
    invB = np.empty((p, N))
    for i, m in enumerate(margins):
        cellA[i] = partition.cell_index(i, A[:, i])
        cellB[i] = partition.cell_index(i, B[:, i])
        pdfA = m.pdf(A[:, i])
        pdfB = m.pdf(B[:, i])
        if np.any(pdfA <= 0) or np.any(pdfB <= 0):
            raise ZeroDivisionError(
                f"nominal density of coordinate {i + 1} vanishes at a sample"
            )
        invA[i] = 1.0 / pdfA
        invB[i] = 1.0 / pdfB
    return SampleWeights(cellA=cellA, cellB=cellB, invA=invA, invB=invB)


@dataclass
class DerivativeTable:
    """Derivative of every index along every basis direction.

    ``dS[k][i]`` and ``dT[k][i]`` are length-``M_i`` arrays of derivatives of
    S_{k+1} / T_{k+1} along the cells of coordinate ``i`` (0-based).
    """

    dS: list
    dT: list
    partition: object
    weights: SampleWeights
    estimates: object

    def entry(self, index_type, k, i, j):
        table = self.dS if index_type == "S" else self.dT
        return float(table[k][i][j])

    def abs_row_sums(self, index_type, k):
        """Per-coordinate sums of absolute entries for one target index."""
        table = self.dS if index_type == "S" else self.dT
        return np.array([np.abs(table[k][i]).sum() for i in range(len(table[k]))])


def _grouped_mean(cells, values, n_cells, N):
    return np.bincount(cells, weights=values, minlength=n_cells) / N


def derivative_F(bundle, weights, partition, k, i, j, F_k=None):
    """Derivative of the first-order numerator F_k along direction ``(i, j)``."""
    if F_k is None:
        F_k = float(np.mean(bundle.fB * (bundle.fC[k] - bundle.fA)))
    base = bundle.fB * (bundle.fC[k] - bundle.fA)
    maskA = weights.cellA[i] == j
    maskB = weights.cellB[i] == j
    term1 = (
        np.sum(base[maskA] * weights.invA[i][maskA])
        + np.sum(base[maskB] * weights.invB[i][maskB])
    ) / bundle.N
    lo, hi = partition.cell(i, j)
    return term1 - (hi - lo) * F_k


def derivative_G(bundle, weights, partition, k, i, j, G_k=None):
    """Derivative of the total-effect numerator G_k along direction ``(i, j)``.

    The primed-coordinate contribution (through ``B[:, k]``) and the
    cell-width subtraction are active only when the perturbed coordinate is
    ``k`` itself.
    """
    base = 0.5 * (bundle.fA - bundle.fC[k]) ** 2
    if G_k is None:
        G_k = float(np.mean(base))
    maskA = weights.cellA[i] == j
    term1 = np.sum(base[maskA] * weights.invA[i][maskA]) / bundle.N
    if i == k:
        maskB = weights.cellB[k] == j
        term1 += np.sum(base[maskB] * weights.invB[k][maskB]) / bundle.N
        lo, hi = partition.cell(i, j)
        return term1 - (hi - lo) * G_k
    return term1


def derivative_H(bundle, weights, partition, i, j):
    """Derivative of the variance denominator along direction ``(i, j)``."""
    fA = bundle.fA
    m = float(np.mean(fA))
    maskA = weights.cellA[i] == j
    w = weights.invA[i][maskA]
    lo, hi = partition.cell(i, j)
    return (
        np.sum(fA[maskA] ** 2 * w) / bundle.N
        + (hi - lo) * m * m
        - 2.0 * m * np.sum(fA[maskA] * w) / bundle.N
    )


def derivative_along(table, index_type, k, directions):
    """Derivative along a linear combination ``sum c * psi_i^j``.

    ``directions`` is an iterable of ``(i, j, coefficient)``; linearity of the
    derivative makes this an exact weighted sum of table entries.
    """
    return sum(c * table.entry(index_type, k, i, j) for i, j, c in directions)


def build_table(bundle, margins, partition, weights=None, estimates=None):
    """Estimate all derivative entries from the bundle (zero model calls)."""
    if weights is None:
        weights = indicator_weights(bundle, margins, partition)
    if estimates is None:
        estimates = estimate_indices(bundle)
    p, N = bundle.p, bundle.N
    termF, termG, termH2, termH1 = row_terms(bundle)
    F_hat = termF.mean(axis=1)
    G_hat = termG.mean(axis=1)
    m_hat = float(termH1.mean())
    varF = estimates.varF
    fA2 = bundle.fA**2

    # dH depends only on the perturbed coordinate
    dH = []
    for i in range(p):
        M_i = partition.n_cells[i]
        widths = partition.widths(i)
        sum_f2 = _grouped_mean(weights.cellA[i], fA2 * weights.invA[i], M_i, N)
        sum_f1 = _grouped_mean(weights.cellA[i], bundle.fA * weights.invA[i], M_i, N)
        dH.append(sum_f2 + widths * m_hat * m_hat - 2.0 * m_hat * sum_f1)

    dS = [[None] * p for _ in range(p)]
    dT = [[None] * p for _ in range(p)]
    for k in range(p):
        baseF = termF[k]
        baseG = termG[k]
        for i in range(p):
            M_i = partition.n_cells[i]
            widths = partition.widths(i)
            dF = (
                _grouped_mean(weights.cellA[i], baseF * weights.invA[i], M_i, N)
                + _grouped_mean(weights.cellB[i], baseF * weights.invB[i], M_i, N)
                - widths * F_hat[k]
            )
            dG = _grouped_mean(weights.cellA[i], baseG * weights.invA[i], M_i, N)
            if i == k:
                dG = (
                    dG
                    + _grouped_mean(
                        weights.cellB[k], baseG * weights.invB[k], M_i, N
                    )
                    - widths * G_hat[k]
                )
            dS[k][i] = (dF - estimates.S[k] * dH[i]) / varF
            dT[k][i] = (dG - estimates.T[k] * dH[i]) / varF
    return DerivativeTable(
        dS=dS, dT=dT, partition=partition, weights=weights, estimates=estimates
    )


def save_table_csv(table, path):
    """Write ``derivatives.csv`` (1-based k, i, j indices)."""
    partition = table.partition
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index_type", "k", "i", "j", "cell_lo", "cell_hi", "value"])
        for index_type, tab in (("S", table.dS), ("T", table.dT)):
            for k, per_coord in enumerate(tab):
                for i, entries in enumerate(per_coord):
                    for j, value in enumerate(entries):
                        lo, hi = partition.cell(i, j)
                        writer.writerow(
                            [index_type, k + 1, i + 1, j + 1,
                             repr(lo), repr(hi), repr(float(value))]
                        )
    os.replace(tmp, path)
