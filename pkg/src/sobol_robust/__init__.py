"""Sobol' sensitivity indices with robustness to marginal density perturbations.

The package estimates first-order and total Sobol' indices by pick-freeze
Monte Carlo, then quantifies their robustness to changes in the input
marginal distributions: directional derivatives of every index with respect
to the marginal densities are estimated from the existing model evaluations,
the worst-case (locally optimal) perturbation is solved in closed form, and
perturbed indices are computed by reweighting — all at negligible cost beyond
the original model evaluations.
"""

from .design import EvalBundle, PickFreezeDesign, evaluate_model, generate_design
from .errors import ConfigError, ModelEvaluationError, ZeroVarianceError
from .estimators import SobolEstimates, bootstrap_std, estimate_indices
from .frechet import DerivativeTable, build_table, indicator_weights
from .margins import (
    MarginalDensity,
    Partition,
    RandomizedSupportUniform,
    TabulatedMarginal,
    TruncatedNormalMarginal,
    UniformMarginal,
    UnitCubeMap,
    build_quantile_partition,
    marginal_from_spec,
)
from .models import (
    AdvectionDiffusionModel,
    ExternalModel,
    LinearModel,
    SyntheticExpModel,
    adv_diff_solve,
    model_from_spec,
    qoi_integrate,
)
from .perturb import (
    PerturbationPlan,
    PerturbedDensity,
    RobustnessReport,
    delta_scan,
    reweighted_indices,
    run_robustness,
    sample_perturbed_marginal,
    solve_optimal_direction,
)

__all__ = [name for name in dir() if not name.startswith("_")]
