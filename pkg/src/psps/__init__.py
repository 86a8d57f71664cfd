"""Post-screening portfolio selection.

Screen a large asset universe by penalized regression of a constant
response on excess returns, then estimate mean-variance weights on the
small screened set; a factor-augmented variant defactors returns first and
invests in the factors alongside. Ships a Monte Carlo harness and a
rolling-window backtester with transaction-cost-aware evaluation.
"""

from .backend import BACKEND
from .defactor import defactor
from .lasso import (
    LassoProblem,
    LassoSolution,
    adaptive_weights,
    kkt_residual,
    lambda_grid,
    lasso_fit,
)
from .moments import kan_zhou_theta, plugin_theta, sample_moments, spd_solve
from .panels import FactorPanel, ReturnPanel, load_factor_panel, load_return_panel
from .portfolio import (
    AugmentedWeights,
    PopulationModel,
    SubpoolConfig,
    WeightVector,
    beta_target,
    fps2_weights,
    maxser_weights,
    plugin_weights,
    population_aug_weights,
    population_mvp_weight,
    portfolio_sharpe,
    post_screen_ols_weights,
)
from .screening import ScreenConfig, ScreeningResult, perturbed_response, screen
from .simulate import (
    DgpSpec,
    SimReport,
    estimation_metrics,
    make_dgp,
    run_experiment,
    screening_metrics,
    strong_factor_demo,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AugmentedWeights",
    "DgpSpec",
    "FactorPanel",
    "LassoProblem",
    "LassoSolution",
    "PopulationModel",
    "ReturnPanel",
    "ScreenConfig",
    "ScreeningResult",
    "SimReport",
    "SubpoolConfig",
    "WeightVector",
    "adaptive_weights",
    "beta_target",
    "defactor",
    "estimation_metrics",
    "fps2_weights",
    "kan_zhou_theta",
    "kkt_residual",
    "lambda_grid",
    "lasso_fit",
    "load_factor_panel",
    "load_return_panel",
    "make_dgp",
    "maxser_weights",
    "plugin_theta",
    "plugin_weights",
    "population_aug_weights",
    "population_mvp_weight",
    "portfolio_sharpe",
    "post_screen_ols_weights",
    "run_experiment",
    "sample_moments",
    "screen",
    "screening_metrics",
    "spd_solve",
    "strong_factor_demo",
]
