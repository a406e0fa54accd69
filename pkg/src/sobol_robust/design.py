"""Pick-freeze sampling design and model evaluation.

The design draws two independent ``N x p`` sample matrices ``A`` and ``B``.
The swap matrices ``C_k`` (row ``n`` of ``C_k`` is row ``n`` of ``A`` with
coordinate ``k`` replaced by ``B[n, k]``) are never stored; rows are assembled
on demand for evaluation, and only the ``(p + 2) N`` model values are kept.

The resulting :class:`EvalBundle` is the single expensive asset of a study:
every later stage (index estimation, derivative tables, robustness scans)
reuses its evaluations without calling the model again.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelEvaluationError


@dataclass(frozen=True)
class PickFreezeDesign:
    """Two independent unit-cube sample matrices and the seed they came from."""

    A: np.ndarray  # (N, p)
    B: np.ndarray  # (N, p)
    seed: int

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.A.shape[1]

    def assemble_swap_row(self, k, n):
        """Row ``n`` of ``C_k``: row ``n`` of ``A`` with coordinate ``k`` from ``B``."""
        row = self.A[n].copy()
        row[k] = self.B[n, k]
        return row


@dataclass
class EvalBundle:
    """Design plus all ``(p + 2) N`` model evaluations."""

    design: PickFreezeDesign
    fA: np.ndarray  # (N,)
    fB: np.ndarray  # (N,)
    fC: np.ndarray  # (p, N); fC[k, n] = f at row n of C_k
    model_id: str = ""

    @property
    def N(self):
        return self.design.N

    @property
    def p(self):
        return self.design.p

    @property
    def n_evaluations(self):
        return (self.p + 2) * self.N


def generate_design(p, N, margins, seed):
    """Draw the ``A`` and ``B`` matrices from the nominal marginals.

    Two substreams are spawned from ``seed`` (one for ``A``, one for ``B``) so
    the design is reproducible independently of how evaluations are ordered.
    Within each matrix, columns are filled coordinate by coordinate: column
    ``i`` consumes the stream's next ``N`` uniforms through marginal ``i``'s
    quantile function.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if p < 1 or len(margins) != p:
        raise ValueError("need one marginal per coordinate")
    child_a, child_b = np.random.SeedSequence(seed).spawn(2)
    rng_a = np.random.default_rng(child_a)
    rng_b = np.random.default_rng(child_b)
    A = np.column_stack([m.sample(N, rng_a) for m in margins])
    B = np.column_stack([m.sample(N, rng_b) for m in margins])
    return PickFreezeDesign(A=A, B=B, seed=seed)


def _check_values(values, rows, what):
    values = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        n = int(bad[0])
        raise ModelEvaluationError(
            f"model returned non-finite value for {what} row {n}",
            row=n,
            coords=rows[n].tolist(),
        )
    return values


def evaluate_model(design, model):
    """Evaluate the model on ``A``, ``B`` and every ``C_k`` and bundle the results.

    Non-finite outputs are errors carrying the offending row; NaNs never
    propagate silently.
    """
    fA = _check_values(model.evaluate_rows(design.A), design.A, "A")
    fB = _check_values(model.evaluate_rows(design.B), design.B, "B")
    fC = np.empty((design.p, design.N))
    for k in range(design.p):
        Ck = design.A.copy()
        Ck[:, k] = design.B[:, k]
        fC[k] = _check_values(model.evaluate_rows(Ck), Ck, f"C_{k + 1}")
    return EvalBundle(
        design=design, fA=fA, fB=fB, fC=fC, model_id=getattr(model, "model_id", "")
    )


def save_bundle(bundle, path):
    """Persist a bundle as a single JSON document (full-precision floats)."""
    doc = {
        "p": bundle.p,
        "N": bundle.N,
        "seed": bundle.design.seed,
        "model_id": bundle.model_id,
        "A": bundle.design.A.tolist(),
        "B": bundle.design.B.tolist(),
        "fA": bundle.fA.tolist(),
        "fB": bundle.fB.tolist(),
        "fC": bundle.fC.tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_bundle(path):
    with open(path) as fh:
        doc = json.load(fh)
    design = PickFreezeDesign(
        A=np.asarray(doc["A"], dtype=float),
        B=np.asarray(doc["B"], dtype=float),
        seed=doc["seed"],
    )
    return EvalBundle(
        design=design,
        fA=np.asarray(doc["fA"], dtype=float),
        fB=np.asarray(doc["fB"], dtype=float),
        fC=np.asarray(doc["fC"], dtype=float),
        model_id=doc.get("model_id", ""),
    )
