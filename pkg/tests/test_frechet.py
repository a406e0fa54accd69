"""Derivative tables: indicator weights, entry formulas, algebraic identities."""

import numpy as np
import pytest

from sobol_robust.design import PickFreezeDesign, EvalBundle, evaluate_model, generate_design
from sobol_robust.estimators import estimate_indices, bootstrap_std
from sobol_robust.frechet import (
    build_table,
    derivative_F,
    derivative_G,
    derivative_H,
    derivative_along,
    indicator_weights,
    save_table_csv,
)
from sobol_robust.margins import (
    Partition,
    TruncatedNormalMarginal,
    UniformMarginal,
    build_quantile_partition,
)
from sobol_robust.models import LinearModel, Model


def uniform_margins(p):
    return [UniformMarginal(0.0, 1.0) for _ in range(p)]


class ConstantModel(Model):
    model_id = "constant"

    def __init__(self, p, value=3.0):
        super().__init__([(0.0, 1.0)] * p)
        self.value = value

    def _evaluate_physical(self, phys):
        return np.full(phys.shape[0], self.value)


@pytest.fixture(scope="module")
def small_uniform():
    margins = uniform_margins(2)
    model = LinearModel([1.0, 1.0])
    bundle = evaluate_model(generate_design(2, 2000, margins, 13), model)
    partition = build_quantile_partition(margins, 5)
    return bundle, margins, partition


class TestIndicatorWeights:
    def test_uniform_weights_are_one(self, small_uniform):
        bundle, margins, partition = small_uniform
        w = indicator_weights(bundle, margins, partition)
        np.testing.assert_array_equal(w.invA, 1.0)
        np.testing.assert_array_equal(w.invB, 1.0)

    def test_one_cell_per_sample(self, small_uniform):
        bundle, margins, partition = small_uniform
        w = indicator_weights(bundle, margins, partition)
        assert w.cellA.min() >= 0 and w.cellA.max() < 5
        assert w.cellB.min() >= 0 and w.cellB.max() < 5

    def test_edge_sample_goes_to_right_cell(self):
        # design with samples sitting exactly on partition edges
        A = np.array([[0.0], [0.2], [0.4], [1.0]])
        B = np.array([[0.1], [0.3], [0.5], [0.9]])
        design = PickFreezeDesign(A=A, B=B, seed=0)
        bundle = EvalBundle(
            design=design, fA=A[:, 0], fB=B[:, 0], fC=B[:, 0][None, :].copy()
        )
        partition = Partition([[0.0, 0.2, 0.4, 1.0]])
        w = indicator_weights(bundle, [UniformMarginal(0.0, 1.0)], partition)
        np.testing.assert_array_equal(w.cellA[0], [0, 1, 2, 2])

    def test_weight_large_but_finite_near_support_edge(self):
        m = TruncatedNormalMarginal(0.5, 0.1, 0.0, 1.0)
        margins = [m]
        design = PickFreezeDesign(
            A=np.array([[0.001]]), B=np.array([[0.999]]), seed=0
        )
        bundle = EvalBundle(
            design=design, fA=np.array([1.0]), fB=np.array([2.0]),
            fC=np.array([[2.0]]),
        )
        partition = Partition([[0.0, 0.5, 1.0]])
        w = indicator_weights(bundle, margins, partition)
        assert w.invA[0, 0] > 100.0
        assert np.isfinite(w.invA[0, 0])
        assert w.invA[0, 0] == pytest.approx(1.0 / float(m.pdf(0.001)))


class TestEntryFormulas:
    def test_sum_over_cells_recovers_numerators(self, small_uniform):
        # uniform marginals: Sigma_j dF = 2F - F = F exactly; same for G, H
        bundle, margins, partition = small_uniform
        w = indicator_weights(bundle, margins, partition)
        est = estimate_indices(bundle)
        F = (bundle.fB * (bundle.fC - bundle.fA)).mean(axis=1)
        G = 0.5 * ((bundle.fA - bundle.fC) ** 2).mean(axis=1)
        for k in range(2):
            for i in range(2):
                sF = sum(
                    derivative_F(bundle, w, partition, k, i, j) for j in range(5)
                )
                assert sF == pytest.approx(F[k], rel=1e-10)
                sG = sum(
                    derivative_G(bundle, w, partition, k, i, j) for j in range(5)
                )
                assert sG == pytest.approx(G[k], rel=1e-10)
        for i in range(2):
            sH = sum(derivative_H(bundle, w, partition, i, j) for j in range(5))
            assert sH == pytest.approx(est.varF, rel=1e-10)

    def test_constant_model_all_zero(self):
        margins = uniform_margins(2)
        bundle = evaluate_model(
            generate_design(2, 500, margins, 3), ConstantModel(2)
        )
        partition = build_quantile_partition(margins, 4)
        w = indicator_weights(bundle, margins, partition)
        for i in range(2):
            for j in range(4):
                assert derivative_F(bundle, w, partition, 0, i, j) == pytest.approx(0, abs=1e-12)
                assert derivative_G(bundle, w, partition, 0, i, j) == pytest.approx(0, abs=1e-12)
                # dH = c^2 (|R| - empirical cell fraction): zero in expectation,
                # Monte Carlo noise of order c^2 / sqrt(N) in sample
                assert abs(derivative_H(bundle, w, partition, i, j)) < 1.0

    def test_dH_inert_coordinate_matches_closed_form(self):
        # f = X1 uniform: along cells of coordinate 2 the derivative of the
        # variance reduces to |R| * (E[f^2] + m^2 - 2 m E[f]) = |R| * Var(f)
        margins = uniform_margins(2)
        bundle = evaluate_model(
            generate_design(2, 4000, margins, 17), LinearModel([1.0, 0.0])
        )
        partition = build_quantile_partition(margins, 5)
        w = indicator_weights(bundle, margins, partition)
        est = estimate_indices(bundle)
        for j in range(5):
            lo, hi = partition.cell(1, j)
            got = derivative_H(bundle, w, partition, 1, j)
            # brute-force from the A-sample rows falling in the cell
            mask = (bundle.design.A[:, 1] >= lo) & (
                (bundle.design.A[:, 1] < hi) | (j == 4)
            )
            m_hat = bundle.fA.mean()
            brute = (
                (bundle.fA[mask] ** 2).sum() / bundle.N
                + (hi - lo) * m_hat**2
                - 2 * m_hat * bundle.fA[mask].sum() / bundle.N
            )
            assert got == pytest.approx(brute, rel=1e-12)
            assert got == pytest.approx((hi - lo) * est.varF, rel=0.15)


class TestBuildTable:
    def test_matches_single_entry_functions(self, small_uniform):
        bundle, margins, partition = small_uniform
        w = indicator_weights(bundle, margins, partition)
        est = estimate_indices(bundle)
        table = build_table(bundle, margins, partition, w, est)
        for k in range(2):
            for i in range(2):
                for j in range(5):
                    dF = derivative_F(bundle, w, partition, k, i, j)
                    dG = derivative_G(bundle, w, partition, k, i, j)
                    dH = derivative_H(bundle, w, partition, i, j)
                    assert table.entry("S", k, i, j) == pytest.approx(
                        (dF - est.S[k] * dH) / est.varF, rel=1e-9, abs=1e-12
                    )
                    assert table.entry("T", k, i, j) == pytest.approx(
                        (dG - est.T[k] * dH) / est.varF, rel=1e-9, abs=1e-12
                    )

    def test_uniform_null_sums(self, linear10_bundle, uniform10_partition):
        bundle, margins, _ = linear10_bundle
        table = build_table(bundle, margins, uniform10_partition)
        est = table.estimates
        for k in range(10):
            tol = 1e-10 * (1 + abs(est.S[k]))
            for i in range(10):
                assert abs(np.sum(table.dS[k][i])) <= tol
                assert abs(np.sum(table.dT[k][i])) <= tol

    def test_inert_coordinate_entries_are_noise(self):
        # f depends only on X1: dT[2] entries are noise around 0
        margins = uniform_margins(2)
        bundle = evaluate_model(
            generate_design(2, 5000, margins, 23), LinearModel([1.0, 0.0])
        )
        partition = build_quantile_partition(margins, 5)
        table = build_table(bundle, margins, partition)
        stdT = bootstrap_std(bundle, 64, seed=0)[1]
        scale = max(stdT[0], 1e-3)
        for i in range(2):
            assert np.abs(table.dT[1][i]).max() < 4 * scale

    def test_linearity_is_exact(self, small_uniform):
        bundle, margins, partition = small_uniform
        table = build_table(bundle, margins, partition)
        combo = [(0, 1, 2.0), (0, 3, -0.5), (1, 2, 1.25)]
        want = (
            2.0 * table.entry("T", 1, 0, 1)
            - 0.5 * table.entry("T", 1, 0, 3)
            + 1.25 * table.entry("T", 1, 1, 2)
        )
        assert derivative_along(table, "T", 1, combo) == want

    def test_zero_model_calls(self, small_uniform):
        bundle, margins, partition = small_uniform
        model = LinearModel([1.0, 1.0])
        before = model.n_evals
        build_table(bundle, margins, partition)
        assert model.n_evals == before == 0

    def test_csv_round_trip(self, small_uniform, tmp_path):
        import csv

        bundle, margins, partition = small_uniform
        table = build_table(bundle, margins, partition)
        path = tmp_path / "derivatives.csv"
        save_table_csv(table, str(path))
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * (5 + 5)
        for row in rows[:10]:
            k = int(row["k"]) - 1
            i = int(row["i"]) - 1
            j = int(row["j"]) - 1
            assert float(row["value"]) == table.entry(row["index_type"], k, i, j)
