"""Test models and the external-model adapter.

Models consume unit-cube rows; each model owns the affine map from the unit
cube back to its physical parameter ranges.  Every model counts its
evaluations (``n_evals``) so the zero-model-call contract of the robustness
post-processing can be asserted.

The contaminant-transport model solves a steady advection-diffusion equation
on the unit square with a Gaussian source, mixed Dirichlet/Robin boundaries,
and a subregion-average concentration as the quantity of interest.  The PDE
is discretized with second-order central finite differences, switching to
first-order upwinding for the advective term wherever the cell Peclet number
exceeds 2 (strong-advection parameter draws would otherwise oscillate on
coarse grids).
"""

from __future__ import annotations

import csv
import shlex
import subprocess
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, ModelEvaluationError

# Nominal physical parameters of the contaminant-transport example, in the
# input order (eps, alpha1, alpha2, xi1, xi2, gamma, beta, nu1, nu2).
ADVDIFF_NOMINAL = np.array([10.0, 210.0, 70.0, 0.5, 0.5, 50.0, 100.0, 0.1, 0.2])
ADVDIFF_NAMES = ["eps", "alpha1", "alpha2", "xi1", "xi2", "gamma", "beta", "nu1", "nu2"]
ADVDIFF_QOI_BOX = (0.5, 0.7, 0.5, 0.7)

PECLET_UPWIND_THRESHOLD = 2.0


class Model:
    """Base class: unit-cube rows in, scalar QoI values out, with a call counter."""

    model_id = "model"

    def __init__(self, ranges):
        ranges = [(float(lo), float(hi)) for lo, hi in ranges]
        if any(hi <= lo for lo, hi in ranges):
            raise ConfigError("physical ranges must have positive width")
        self.los = np.array([lo for lo, _ in ranges])
        self.widths = np.array([hi - lo for lo, hi in ranges])
        self.n_evals = 0

    @property
    def p(self):
        return self.los.size

    def to_physical(self, rows):
        return self.los + np.asarray(rows, dtype=float) * self.widths

    def evaluate_rows(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.p:
            raise ValueError(f"expected rows of dimension {self.p}")
        self.n_evals += rows.shape[0]
        return self._evaluate_physical(self.to_physical(rows))

    def evaluate_row(self, row):
        return float(self.evaluate_rows(np.asarray(row)[None, :])[0])

    def _evaluate_physical(self, phys):
        raise NotImplementedError


class LinearModel(Model):
    """Weighted sum of the inputs."""

    model_id = "linear"

    def __init__(self, coefficients, ranges=None):
        coefficients = np.asarray(coefficients, dtype=float)
        if ranges is None:
            ranges = [(0.0, 1.0)] * coefficients.size
        super().__init__(ranges)
        if coefficients.size != self.p:
            raise ConfigError("one coefficient per coordinate required")
        self.coefficients = coefficients

    def _evaluate_physical(self, phys):
        return phys @ self.coefficients


class SyntheticExpModel(Model):
    """Three-input benchmark ``2 x2 exp(-2 x1) + x3^2`` on the unit cube."""

    model_id = "exp_synthetic"

    def __init__(self, ranges=None):
        super().__init__(ranges if ranges is not None else [(0.0, 1.0)] * 3)
        if self.p != 3:
            raise ConfigError("exp_synthetic model has exactly 3 inputs")

    def _evaluate_physical(self, phys):
        return 2.0 * phys[:, 1] * np.exp(-2.0 * phys[:, 0]) + phys[:, 2] ** 2


def adv_diff_solve(params, n_grid, source=None, dirichlet_all=False, boundary=None):
    """Solve the steady advection-diffusion problem on an ``n_grid^2`` grid.

    ``params`` are the 9 physical parameters (eps, alpha1, alpha2, xi1, xi2,
    gamma, beta, nu1, nu2).  The velocity field is
    ``(alpha1 (y1 + 0.5), alpha2 (y2 + 0.5))`` and the default source is the
    Gaussian ``beta exp(-gamma ((y1 - xi1)^2 + (y2 - xi2)^2))``.  Boundaries:
    homogeneous Dirichlet on the left and bottom edges, Robin
    ``du/dn = nu1 u`` on the right edge and ``du/dn = nu2 u`` on the top edge
    (ghost-node elimination, second order).

    ``source`` overrides the forcing with a callable ``(Y1, Y2) -> array``;
    with ``dirichlet_all`` the ``boundary`` callable is imposed on all four
    edges (used for manufactured-solution verification).

    Returns the solution on the grid as an ``(n_grid, n_grid)`` array indexed
    ``u[i1, i2]`` with ``y1 = i1 h``, ``y2 = i2 h``.
    """
    eps, a1, a2, xi1, xi2, gamma, beta, nu1, nu2 = map(float, params)
    if eps <= 0:
        raise ValueError("diffusion coefficient must be positive")
    if n_grid < 33:
        raise ValueError("n_grid must be >= 33")
    n = int(n_grid)
    h = 1.0 / (n - 1)
    y = np.linspace(0.0, 1.0, n)
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")

    v1 = a1 * (y + 0.5)  # depends on y1 only
    v2 = a2 * (y + 0.5)  # depends on y2 only

    cC = np.full((n, n), 4.0 * eps / h**2)
    cE = np.full((n, n), -eps / h**2)
    cW = np.full((n, n), -eps / h**2)
    cN = np.full((n, n), -eps / h**2)
    cS = np.full((n, n), -eps / h**2)

    def add_advection(speed, c_minus, c_plus, along_rows):
        # speed: (n,) along the differenced axis; along_rows=True means the
        # y1 axis (stencil neighbors cW/cE), else the y2 axis (cS/cN).
        pe = np.abs(speed) * h / eps
        upwind = pe > PECLET_UPWIND_THRESHOLD
        central = ~upwind
        pos = upwind & (speed >= 0)
        neg = upwind & (speed < 0)
        dC = np.where(pos, speed / h, 0.0) + np.where(neg, -speed / h, 0.0)
        dP = np.where(central, speed / (2 * h), 0.0) + np.where(neg, speed / h, 0.0)
        dM = np.where(central, -speed / (2 * h), 0.0) + np.where(pos, -speed / h, 0.0)
        if along_rows:
            cC[...] += dC[:, None]
            c_plus[...] += dP[:, None]
            c_minus[...] += dM[:, None]
        else:
            cC[...] += dC[None, :]
            c_plus[...] += dP[None, :]
            c_minus[...] += dM[None, :]

    add_advection(v1, cW, cE, True)
    add_advection(v2, cS, cN, False)

    if source is None:
        rhs = beta * np.exp(-gamma * ((Y1 - xi1) ** 2 + (Y2 - xi2) ** 2))
    else:
        rhs = np.asarray(source(Y1, Y2), dtype=float)

    if dirichlet_all:
        dirichlet = np.zeros((n, n), dtype=bool)
        dirichlet[0, :] = dirichlet[-1, :] = True
        dirichlet[:, 0] = dirichlet[:, -1] = True
        bc_values = np.asarray(boundary(Y1, Y2), dtype=float)
    else:
        # Robin ghost elimination on the right edge: the ghost value
        # u[n, j] = u[n-2, j] + 2 h nu1 u[n-1, j] folds into cW and cC.
        cW[-1, :] += cE[-1, :]
        cC[-1, :] += 2.0 * h * nu1 * cE[-1, :]
        cE[-1, :] = 0.0
        # and on the top edge with nu2
        cS[:, -1] += cN[:, -1]
        cC[:, -1] += 2.0 * h * nu2 * cN[:, -1]
        cN[:, -1] = 0.0
        dirichlet = np.zeros((n, n), dtype=bool)
        dirichlet[0, :] = True
        dirichlet[:, 0] = True
        bc_values = np.zeros((n, n))

    cC[dirichlet] = 1.0
    for arr in (cE, cW, cN, cS):
        arr[dirichlet] = 0.0
    rhs[dirichlet] = bc_values[dirichlet]

    idx = np.arange(n * n).reshape(n, n)
    rows, cols, data = [], [], []
    rows.append(idx.ravel()); cols.append(idx.ravel()); data.append(cC.ravel())
    rows.append(idx[:-1, :].ravel()); cols.append(idx[1:, :].ravel()); data.append(cE[:-1, :].ravel())
    rows.append(idx[1:, :].ravel()); cols.append(idx[:-1, :].ravel()); data.append(cW[1:, :].ravel())
    rows.append(idx[:, :-1].ravel()); cols.append(idx[:, 1:].ravel()); data.append(cN[:, :-1].ravel())
    rows.append(idx[:, 1:].ravel()); cols.append(idx[:, :-1].ravel()); data.append(cS[:, 1:].ravel())
    A = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    ).tocsr()
    u = spsolve(A, rhs.ravel())
    if not np.all(np.isfinite(u)):
        raise ModelEvaluationError(
            f"advection-diffusion solve produced non-finite values for params {list(params)}"
        )
    return u.reshape(n, n)


def qoi_integrate(field, box=ADVDIFF_QOI_BOX, n_quad=64):
    """Area-average of a grid field over a box, by bilinear interpolation.

    The quadrature grid is ``n_quad x n_quad`` cell midpoints inside the box
    (midpoint rule: exact for fields linear in each coordinate).
    """
    u = np.asarray(field, dtype=float)
    n = u.shape[0]
    h = 1.0 / (n - 1)
    lo1, hi1, lo2, hi2 = box
    if not (0 <= lo1 < hi1 <= 1 and 0 <= lo2 < hi2 <= 1):
        raise ValueError("box must be inside the unit square")
    q1 = lo1 + (hi1 - lo1) * (np.arange(n_quad) + 0.5) / n_quad
    q2 = lo2 + (hi2 - lo2) * (np.arange(n_quad) + 0.5) / n_quad
    Q1, Q2 = np.meshgrid(q1, q2, indexing="ij")
    i1 = np.clip((Q1 / h).astype(int), 0, n - 2)
    i2 = np.clip((Q2 / h).astype(int), 0, n - 2)
    t1 = Q1 / h - i1
    t2 = Q2 / h - i2
    vals = (
        u[i1, i2] * (1 - t1) * (1 - t2)
        + u[i1 + 1, i2] * t1 * (1 - t2)
        + u[i1, i2 + 1] * (1 - t1) * t2
        + u[i1 + 1, i2 + 1] * t1 * t2
    )
    return float(vals.mean())


def advdiff_ranges(uncertainty=0.3):
    """Physical ranges ``nominal * (1 - u, 1 + u)`` for all 9 parameters."""
    return [(v * (1 - uncertainty), v * (1 + uncertainty)) for v in ADVDIFF_NOMINAL]


class AdvectionDiffusionModel(Model):
    """Average contaminant concentration in a subregion of the unit square."""

    model_id = "advection_diffusion"

    def __init__(self, n_grid=65, qoi_box=ADVDIFF_QOI_BOX, ranges=None):
        super().__init__(ranges if ranges is not None else advdiff_ranges())
        if self.p != 9:
            raise ConfigError("advection_diffusion model has exactly 9 inputs")
        self.n_grid = int(n_grid)
        self.qoi_box = tuple(qoi_box)

    def _evaluate_physical(self, phys):
        out = np.empty(phys.shape[0])
        for n, params in enumerate(phys):
            try:
                field = adv_diff_solve(params, self.n_grid)
            except ModelEvaluationError as exc:
                exc.row = n
                exc.coords = params.tolist()
                raise
            out[n] = qoi_integrate(field, self.qoi_box)
        return out


class ExternalModel(Model):
    """File-based batch adapter for user-provided models.

    A batch is evaluated by writing ``inputs.csv`` (header ``x1,...,xp``, one
    physical-coordinate row per line) into the exchange directory, running
    ``command io_dir``, and reading ``outputs.csv`` (header ``f``, one value
    per input row, in order).  Nonzero exit, missing rows, or non-finite
    values are evaluation errors.
    """

    model_id = "external"

    def __init__(self, command, io_dir, ranges):
        super().__init__(ranges)
        self.command = command
        self.io_dir = Path(io_dir)
        self.io_dir.mkdir(parents=True, exist_ok=True)

    def _evaluate_physical(self, phys):
        inputs = self.io_dir / "inputs.csv"
        with open(inputs, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i + 1}" for i in range(self.p)])
            for row in phys:
                writer.writerow([repr(float(v)) for v in row])
        proc = subprocess.run(
            shlex.split(self.command) + [str(self.io_dir)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise ModelEvaluationError(
                f"external model exited with code {proc.returncode}: {proc.stderr.strip()}"
            )
        outputs = self.io_dir / "outputs.csv"
        if not outputs.exists():
            raise ModelEvaluationError("external model produced no outputs.csv")
        with open(outputs, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0].strip().lower() != "f":
                raise ModelEvaluationError("outputs.csv must have header 'f'")
            values = [float(r[0]) for r in reader if r]
        if len(values) != phys.shape[0]:
            raise ModelEvaluationError(
                f"external model returned {len(values)} values for {phys.shape[0]} inputs"
            )
        return np.asarray(values)


def model_from_spec(spec, ranges=None):
    """Build a model from a configuration dictionary.

    ``ranges`` (typically the margins' physical supports) override each
    model's defaults so that margins and model agree on the unit-cube map.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"model spec must be a dict with a 'kind' key: {spec!r}")
    kind = spec["kind"]
    if kind == "linear":
        if "coefficients" not in spec:
            raise ConfigError("linear model needs 'coefficients'")
        return LinearModel(spec["coefficients"], ranges)
    if kind == "exp_synthetic":
        return SyntheticExpModel(ranges)
    if kind == "advection_diffusion":
        return AdvectionDiffusionModel(
            n_grid=spec.get("grid_n", 65),
            qoi_box=tuple(spec.get("qoi_box", ADVDIFF_QOI_BOX)),
            ranges=ranges,
        )
    if kind == "external":
        if ranges is None:
            raise ConfigError("external model needs margins to define its ranges")
        if "command" not in spec or "io_dir" not in spec:
            raise ConfigError("external model needs 'command' and 'io_dir'")
        return ExternalModel(spec["command"], spec["io_dir"], ranges)
    raise ConfigError(f"unknown model kind '{kind}'")
