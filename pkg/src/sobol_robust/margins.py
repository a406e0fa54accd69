"""Marginal input distributions on compact intervals.

Each marginal lives on a physical support ``[lo, hi]`` but exposes its density,
CDF, quantile function, samples, and per-cell infima in *unit coordinates*:
the affine image of the support on ``[0, 1]``, with the Jacobian factor
``hi - lo`` folded into the density so that it integrates to one on ``[0, 1]``.
Every downstream stage (sampling design, estimators, density perturbations)
works exclusively in unit coordinates; only the model maps back to physical
space.

Supported families
------------------
uniform
    Uniform on ``[lo, hi]``; the unit-coordinate density is identically 1.
truncated_normal
    Normal(mu, sigma) truncated to ``[lo, hi]``.
randomized_support_uniform
    ``X`` uniform on ``[A, B]`` where the endpoints ``A`` and ``B`` are
    themselves uniform on given intervals.  The marginal density of ``X`` has
    no simple closed form; it is precomputed on a grid by tensor quadrature
    over ``(A, B)`` and evaluated by linear interpolation.
tabulated
    User-supplied (x, density) table, renormalized to unit mass at load time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError

# Number of grid points used for grid-backed densities.
GRID_POINTS = 2001

# Grid minima can overestimate the true infimum of an interpolated density;
# the optimal-direction coefficients need |a| <= inf(pdf) to keep perturbed
# densities nonnegative, so grid-backed families shrink by this factor.
GRID_INF_SAFETY = 0.999

# Strictly positive floor applied to grid-backed densities (relative to their
# maximum); the method assumes a positive density on the whole support.
_POSITIVITY_FLOOR = 1e-12


def _check_unit(x, name="x"):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


class MarginalDensity:
    """Base class: one input's nominal distribution in unit coordinates.

    Subclasses must provide ``pdf``, ``cdf``, ``quantile`` and
    ``cell_infimum``; ``sample`` and ``cell_mass`` are derived.
    """

    family = "abstract"

    def __init__(self, lo, hi):
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"support must be a finite interval, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self.width = self.hi - self.lo

    # -- physical <-> unit ------------------------------------------------
    def to_unit(self, x_phys):
        return (np.asarray(x_phys, dtype=float) - self.lo) / self.width

    def from_unit(self, x_unit):
        return self.lo + np.asarray(x_unit, dtype=float) * self.width

    # -- unit-coordinate distribution ------------------------------------
    def pdf(self, x):
        """Nominal density at unit coordinate ``x`` (Jacobian included)."""
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, q):
        """Unit coordinate with ``cdf(x) = q``; monotone, quantile(0)=0, quantile(1)=1."""
        raise NotImplementedError

    def cell_infimum(self, cell_lo, cell_hi):
        """A positive lower bound (tight for closed-form families) of the density on a cell."""
        raise NotImplementedError

    def cell_mass(self, cell_lo, cell_hi):
        """Probability mass of the unit-coordinate cell ``[cell_lo, cell_hi]``."""
        return float(self.cdf(cell_hi) - self.cdf(cell_lo))

    def sample(self, n, rng):
        """Draw ``n`` i.i.d. unit-coordinate samples by inverse CDF on ``rng``'s uniforms."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return self.quantile(rng.random(n))


class UniformMarginal(MarginalDensity):
    family = "uniform"

    def pdf(self, x):
        x = _check_unit(x)
        return np.ones_like(x)

    def cdf(self, x):
        return np.asarray(x, dtype=float)

    def quantile(self, q):
        q = _check_unit(q, "q")
        return q

    def cell_infimum(self, cell_lo, cell_hi):
        return 1.0

    def sample(self, n, rng):
        if n < 1:
            raise ValueError("n must be >= 1")
        return rng.random(n)


class TruncatedNormalMarginal(MarginalDensity):
    family = "truncated_normal"

    def __init__(self, mu, sigma, lo, hi):
        super().__init__(lo, hi)
        if sigma <= 0:
            raise ConfigError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)
        a = (self.lo - self.mu) / self.sigma
        b = (self.hi - self.mu) / self.sigma
        self._dist = stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)

    def pdf(self, x):
        x = _check_unit(x)
        return self.width * self._dist.pdf(self.from_unit(x))

    def cdf(self, x):
        return self._dist.cdf(self.from_unit(x))

    def quantile(self, q):
        q = _check_unit(q, "q")
        return self.to_unit(self._dist.ppf(q))

    def cell_infimum(self, cell_lo, cell_hi):
        # Unimodal: the minimum over any cell is attained at an endpoint,
        # including cells straddling the mode.
        return float(min(self.pdf(cell_lo), self.pdf(cell_hi)))


class _GridMarginal(MarginalDensity):
    """Density given by values on a uniform unit grid, interpolated linearly.

    The CDF is the exact integral of the piecewise-linear density (quadratic
    within each grid interval), so density, mass, and quantiles are mutually
    consistent to round-off.
    """

    def __init__(self, lo, hi, grid_values):
        super().__init__(lo, hi)
        vals = np.asarray(grid_values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ConfigError("grid density needs at least 2 values")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ConfigError("grid density values must be finite and nonnegative")
        vals = np.maximum(vals, _POSITIVITY_FLOOR * max(vals.max(), 1.0))
        self._xs = np.linspace(0.0, 1.0, vals.size)
        self._h = self._xs[1] - self._xs[0]
        # renormalize to unit mass under the trapezoid rule
        total = np.trapezoid(vals, self._xs)
        self._vals = vals / total
        cum = np.concatenate(
            ([0.0], np.cumsum(0.5 * (self._vals[1:] + self._vals[:-1]) * self._h))
        )
        self._cum = cum / cum[-1]

    def pdf(self, x):
        x = _check_unit(x)
        return np.interp(x, self._xs, self._vals)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.floor(x / self._h).astype(int), 0, self._vals.size - 2)
        t = x - self._xs[idx]
        v0 = self._vals[idx]
        slope = (self._vals[idx + 1] - v0) / self._h
        out = self._cum[idx] + v0 * t + 0.5 * slope * t * t
        return np.clip(out, 0.0, 1.0)

    def quantile(self, q):
        q = _check_unit(np.asarray(q, dtype=float), "q")
        scalar = q.ndim == 0
        q = np.atleast_1d(q)
        lo = np.zeros_like(q)
        hi = np.ones_like(q)
        # bisection on the monotone CDF; 50 halvings reach well below 1e-12
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        out[q == 0.0] = 0.0
        out[q == 1.0] = 1.0
        return out[0] if scalar else out

    def cell_infimum(self, cell_lo, cell_hi):
        # piecewise-linear density: minimum over the cell is attained at the
        # interpolated endpoints or at an interior knot
        interior = self._xs[(self._xs > cell_lo) & (self._xs < cell_hi)]
        candidates = np.concatenate(([cell_lo, cell_hi], interior))
        return GRID_INF_SAFETY * float(self.pdf(candidates).min())


class RandomizedSupportUniform(_GridMarginal):
    """Uniform on ``[A, B]`` with random endpoints ``A ~ U[a0, a1]``, ``B ~ U[b0, b1]``."""

    family = "randomized_support_uniform"

    def __init__(self, endpoint_lo_interval, endpoint_hi_interval, n_quad=512):
        a0, a1 = map(float, endpoint_lo_interval)
        b0, b1 = map(float, endpoint_hi_interval)
        if not (a0 < a1 <= b0 < b1):
            raise ConfigError(
                "endpoint intervals must satisfy a0 < a1 <= b0 < b1, "
                f"got [{a0}, {a1}] and [{b0}, {b1}]"
            )
        self.endpoint_lo_interval = (a0, a1)
        self.endpoint_hi_interval = (b0, b1)
        vals = self._tensor_density(a0, a1, b0, b1, n_quad)
        super().__init__(a0, b1, vals)

    @staticmethod
    def _tensor_density(a0, a1, b0, b1, n_quad):
        # Marginal density of X at x: E[ 1{A <= x <= B} / (B - A) ], computed
        # with midpoint nodes for A and B.  Suffix sums over B and prefix sums
        # over A turn the per-point tensor sum into an O(1) table lookup.
        a_nodes = a0 + (a1 - a0) * (np.arange(n_quad) + 0.5) / n_quad
        b_nodes = b0 + (b1 - b0) * (np.arange(n_quad) + 0.5) / n_quad
        inv = 1.0 / (b_nodes[None, :] - a_nodes[:, None])  # (nA, nB)
        suffix = np.zeros((n_quad, n_quad + 1))
        suffix[:, :-1] = np.cumsum(inv[:, ::-1], axis=1)[:, ::-1]
        prefix = np.vstack([np.zeros(n_quad + 1), np.cumsum(suffix, axis=0)])
        xs = np.linspace(a0, b1, GRID_POINTS)
        ia = np.searchsorted(a_nodes, xs, side="right")  # A nodes <= x
        ib = np.searchsorted(b_nodes, xs, side="left")  # first B node >= x
        vals = prefix[ia, ib] / (n_quad * n_quad)
        return vals * (b1 - a0)  # unit-coordinate Jacobian


class TabulatedMarginal(_GridMarginal):
    """Density loaded from a user-supplied (x, density) table."""

    family = "tabulated"

    def __init__(self, grid_points, density_values):
        xs = np.asarray(grid_points, dtype=float)
        vals = np.asarray(density_values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.shape != vals.shape:
            raise ConfigError("tabulated density needs matching 1-D x and density arrays")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("tabulated x values must be strictly increasing")
        if np.any(vals <= 0):
            raise ConfigError("tabulated density values must be strictly positive")
        lo, hi = xs[0], xs[-1]
        unit_xs = np.linspace(0.0, 1.0, GRID_POINTS)
        unit_vals = np.interp(unit_xs, (xs - lo) / (hi - lo), vals * (hi - lo))
        super().__init__(lo, hi, unit_vals)

    @classmethod
    def from_csv(cls, path):
        """Load a two-column ``x,density`` CSV with a header line."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:2]] != ["x", "density"]:
                raise ConfigError(f"{path}: expected header 'x,density'")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        if len(rows) < 2:
            raise ConfigError(f"{path}: need at least 2 rows")
        xs, vals = zip(*rows)
        return cls(np.array(xs), np.array(vals))


def marginal_from_spec(spec):
    """Build a marginal from a configuration dictionary."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError(f"marginal spec must be a dict with a 'family' key: {spec!r}")
    family = spec["family"]
    try:
        if family == "uniform":
            return UniformMarginal(spec["lo"], spec["hi"])
        if family == "truncated_normal":
            return TruncatedNormalMarginal(spec["mu"], spec["sigma"], spec["lo"], spec["hi"])
        if family == "randomized_support_uniform":
            return RandomizedSupportUniform(
                spec["endpoint_lo_interval"], spec["endpoint_hi_interval"]
            )
        if family == "tabulated":
            if "file" in spec:
                return TabulatedMarginal.from_csv(spec["file"])
            return TabulatedMarginal(spec["grid_points"], spec["density_values"])
    except KeyError as exc:
        raise ConfigError(f"marginal spec for family '{family}' is missing {exc}") from exc
    raise ConfigError(f"unknown marginal family '{family}'")


@dataclass(frozen=True)
class UnitCubeMap:
    """Per-coordinate affine maps between physical supports and the unit cube."""

    los: np.ndarray
    widths: np.ndarray

    @classmethod
    def from_margins(cls, margins):
        return cls(
            los=np.array([m.lo for m in margins]),
            widths=np.array([m.width for m in margins]),
        )

    def to_unit(self, rows):
        return (np.asarray(rows, dtype=float) - self.los) / self.widths

    def from_unit(self, rows):
        return self.los + np.asarray(rows, dtype=float) * self.widths


class Partition:
    """Per-coordinate cell edges ``0 = e_0 < ... < e_M = 1`` in unit coordinates.

    Cells are half-open ``[e_{j-1}, e_j)``; the last cell is closed so that
    the cells cover ``[0, 1]`` exactly.
    """

    def __init__(self, edges_per_coordinate):
        self.edges = []
        for i, edges in enumerate(edges_per_coordinate):
            e = np.asarray(edges, dtype=float)
            if e.size < 3:
                raise ConfigError(f"coordinate {i}: need at least 2 cells")
            if abs(e[0]) > 1e-12 or abs(e[-1] - 1.0) > 1e-12:
                raise ConfigError(f"coordinate {i}: edges must span [0, 1]")
            if np.any(np.diff(e) <= 0):
                raise ConfigError(f"coordinate {i}: edges must be strictly increasing")
            e[0], e[-1] = 0.0, 1.0
            self.edges.append(e)
        self.p = len(self.edges)
        self.n_cells = [e.size - 1 for e in self.edges]

    def widths(self, i):
        return np.diff(self.edges[i])

    def cell(self, i, j):
        e = self.edges[i]
        return float(e[j]), float(e[j + 1])

    def cell_index(self, i, x):
        """Cell containing unit coordinate ``x`` (edge points go to the right cell)."""
        e = self.edges[i]
        return np.minimum(
            np.searchsorted(e[1:-1], x, side="right"), self.n_cells[i] - 1
        )


def build_quantile_partition(margins, n_cells):
    """Partition each coordinate into cells of equal nominal probability mass.

    ``n_cells`` is a single cell count applied to every coordinate or one
    count per coordinate.
    """
    if np.isscalar(n_cells):
        n_cells = [int(n_cells)] * len(margins)
    if len(n_cells) != len(margins):
        raise ConfigError("need one cell count per coordinate")
    edges_per_coordinate = []
    for i, (m, M) in enumerate(zip(margins, n_cells)):
        if M < 2:
            raise ConfigError(f"coordinate {i}: cell count must be >= 2, got {M}")
        edges = np.asarray(m.quantile(np.arange(M + 1) / M), dtype=float)
        edges[0], edges[-1] = 0.0, 1.0
        if np.any(np.diff(edges) <= 0):
            raise ConfigError(
                f"coordinate {i}: degenerate density, quantile edges coincide"
            )
        edges_per_coordinate.append(edges)
    return Partition(edges_per_coordinate)
