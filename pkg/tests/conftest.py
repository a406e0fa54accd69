"""Shared fixtures: small evaluation bundles reused across test modules."""

import numpy as np
import pytest

from sobol_robust.design import evaluate_model, generate_design
from sobol_robust.margins import (
    RandomizedSupportUniform,
    UniformMarginal,
    build_quantile_partition,
)
from sobol_robust.models import LinearModel, SyntheticExpModel


@pytest.fixture(scope="session")
def linear2_bundle():
    """f = X1 + X2 with uniform marginals, N = 4000."""
    margins = [UniformMarginal(0.0, 1.0) for _ in range(2)]
    model = LinearModel([1.0, 1.0])
    design = generate_design(2, 4000, margins, seed=11)
    return evaluate_model(design, model), margins, model


@pytest.fixture(scope="session")
def linear10_bundle():
    """The 10-coordinate linear benchmark a_i = 11 - i, uniform marginals."""
    margins = [UniformMarginal(0.0, 1.0) for _ in range(10)]
    model = LinearModel(np.arange(10.0, 0.0, -1.0))
    design = generate_design(10, 5000, margins, seed=2024)
    return evaluate_model(design, model), margins, model


@pytest.fixture(scope="session")
def synthetic_bundle():
    """The 3-coordinate exponential benchmark with randomized-support marginals."""
    margins = [
        RandomizedSupportUniform((0.0, 0.1), (0.9, 1.0)) for _ in range(3)
    ]
    model = SyntheticExpModel([(m.lo, m.hi) for m in margins])
    design = generate_design(3, 5000, margins, seed=7)
    return evaluate_model(design, model), margins, model


@pytest.fixture(scope="session")
def synthetic_partition(synthetic_bundle):
    _, margins, _ = synthetic_bundle
    return build_quantile_partition(margins, 10)


@pytest.fixture(scope="session")
def uniform10_partition(linear10_bundle):
    _, margins, _ = linear10_bundle
    return build_quantile_partition(margins, 10)
