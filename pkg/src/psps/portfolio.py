"""Portfolio weight constructions and Sharpe-ratio evaluation.

Population formulas (minimum-variance weight, its regression-coefficient
rescaling, the screening target, and the factor-augmented decoupling),
sample-based constructions on a screened set (OLS on an inflated constant
response, plug-in), the penalized single-step baseline with sub-pool
selection, and the factor-augmented weight used by backtests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    ConfigError,
    DegenerateModelError,
    EmptyScreenError,
    RegimeError,
    SingularMatrixError,
    UndefinedRatioError,
)
from .lasso import LassoProblem, lambda_grid, lasso_fit, lasso_path_gram
from .moments import kan_zhou_theta, plugin_theta, sample_moments, spd_solve
from .panels import ReturnPanel
from .screening import make_folds

_SUBPOOL_STREAM = 2
_MAXSER_FOLD_STREAM = 3


@dataclass
class WeightVector:
    """Sparse weights over an asset universe, keyed by column index."""

    entries: dict[int, float]
    universe_size: int
    target_return: float

    def __post_init__(self):
        for idx, w in self.entries.items():
            if not 0 <= idx < self.universe_size:
                raise ValueError(f"index {idx} outside universe of {self.universe_size}")
            if not np.isfinite(w):
                raise ValueError(f"non-finite weight at index {idx}")

    @classmethod
    def from_dense(cls, arr, target_return: float) -> "WeightVector":
        arr = np.asarray(arr, dtype=np.float64)
        entries = {int(j): float(arr[j]) for j in np.flatnonzero(arr)}
        return cls(entries=entries, universe_size=arr.size, target_return=target_return)

    def to_dense(self) -> np.ndarray:
        arr = np.zeros(self.universe_size)
        for idx, w in self.entries.items():
            arr[idx] = w
        return arr

    @property
    def support(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.intp)

    def to_dict(self) -> dict:
        return {
            "universe_size": self.universe_size,
            "target_return": self.target_return,
            "entries": {str(k): self.entries[k] for k in sorted(self.entries)},
        }


@dataclass
class AugmentedWeights:
    """Asset-block weights plus a dense block on investable factors."""

    asset_block: WeightVector
    factor_block: np.ndarray

    def __post_init__(self):
        self.factor_block = np.asarray(self.factor_block, dtype=np.float64)

    def to_dense(self) -> np.ndarray:
        return np.concatenate([self.asset_block.to_dense(), self.factor_block])

    def to_dict(self) -> dict:
        out = self.asset_block.to_dict()
        out["factor_block"] = [float(w) for w in self.factor_block]
        return out


@dataclass
class PopulationModel:
    """Population mean/covariance, optionally with a factor decomposition."""

    mu: np.ndarray
    sigma: np.ndarray
    loadings: np.ndarray | None = None   # N x K
    mu_x: np.ndarray | None = None       # K
    sigma_x: np.ndarray | None = None    # K x K
    mu_u: np.ndarray | None = None       # N
    sigma_u: np.ndarray | None = None    # N x N

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)

    @property
    def has_factor_block(self) -> bool:
        return self.loadings is not None

    def theta(self) -> float:
        return float(self.mu @ spd_solve(self.sigma, self.mu))


def inflated_response(rho_bar: float, theta: float) -> float:
    """Constant response rho*(1+theta)/theta that makes the OLS weight hit rho."""
    return rho_bar * (1.0 + theta) / theta


def sharpe_from_moments(mean, cov, weights) -> float:
    """w'mu / sqrt(w' Sigma w); undefined for zero or degenerate weights."""
    weights = np.asarray(weights, dtype=np.float64)
    var = float(weights @ cov @ weights)
    if var <= 0.0:
        raise UndefinedRatioError("portfolio variance is not positive")
    return float(weights @ mean) / np.sqrt(var)


def population_mvp_weight(model: PopulationModel, rho_bar: float,
                          variant: str = "mvp") -> WeightVector:
    """Population optimal weight: (rho/theta) Sigma^{-1} mu, or the
    regression variant scaled by rho/(1+theta)."""
    if variant not in ("mvp", "bj"):
        raise ValueError(f"unknown variant {variant!r}")
    direction = spd_solve(model.sigma, model.mu)
    theta = float(model.mu @ direction)
    if theta <= 0:
        raise DegenerateModelError(f"squared Sharpe ratio {theta} is not positive")
    scale = rho_bar / theta if variant == "mvp" else rho_bar / (1.0 + theta)
    return WeightVector.from_dense(scale * direction, rho_bar)


def beta_target(model: PopulationModel, alpha: float) -> np.ndarray:
    """Screening target alpha * (Sigma + mu mu')^{-1} mu.

    Shares the support of the optimal weight: Sigma^{-1} mu equals
    (1+theta) (Sigma + mu mu')^{-1} mu.
    """
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    second_moment = model.sigma + np.outer(model.mu, model.mu)
    return alpha * spd_solve(second_moment, model.mu)


def population_aug_weights(model: PopulationModel, rho_bar: float) -> AugmentedWeights:
    """Optimal weights of the factor-augmented problem.

    Asset block: (rho/theta_aug) Sigma_u^{-1} mu_u. Factor block:
    (rho/theta_aug) (Sigma_x^{-1} mu_x - A' Sigma_u^{-1} mu_u), with
    theta_aug = mu_u' Sigma_u^{-1} mu_u + mu_x' Sigma_x^{-1} mu_x.
    """
    if not model.has_factor_block:
        raise ConfigError("model has no factor block")
    du = spd_solve(model.sigma_u, model.mu_u)
    dx = spd_solve(model.sigma_x, model.mu_x)
    theta_aug = float(model.mu_u @ du + model.mu_x @ dx)
    if theta_aug <= 0:
        raise DegenerateModelError("augmented squared Sharpe ratio is not positive")
    scale = rho_bar / theta_aug
    asset = WeightVector.from_dense(scale * du, rho_bar)
    factor = scale * (dx - model.loadings.T @ du)
    return AugmentedWeights(asset_block=asset, factor_block=factor)


def augmented_moments(model: PopulationModel) -> tuple[np.ndarray, np.ndarray]:
    """(mu, Sigma) of the stacked (assets, factors) return vector."""
    if not model.has_factor_block:
        raise ConfigError("model has no factor block")
    a, sx = model.loadings, model.sigma_x
    mu_aug = np.concatenate([model.mu, model.mu_x])
    top = np.hstack([model.sigma, a @ sx])
    bottom = np.hstack([sx @ a.T, sx])
    return mu_aug, np.vstack([top, bottom])


def portfolio_sharpe(weights, model: PopulationModel) -> float:
    """Population Sharpe ratio of a weight vector under the model."""
    if isinstance(weights, AugmentedWeights):
        mu, sigma = augmented_moments(model)
        w = weights.to_dense()
    else:
        mu, sigma = model.mu, model.sigma
        w = weights.to_dense()
    return sharpe_from_moments(mu, sigma, w)


def _selected_block(panel: ReturnPanel, selected) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(selected, dtype=np.intp)
    if idx.size == 0:
        raise EmptyScreenError("no selected assets to estimate on")
    if idx.size >= panel.n_periods:
        raise RegimeError(
            f"selected set of {idx.size} is not below T={panel.n_periods}"
        )
    return idx, panel.values[:, idx]


def post_screen_ols_weights(panel: ReturnPanel, selected, rho_bar: float) -> WeightVector:
    """OLS of the inflated constant response on the selected columns.

    theta is the plug-in estimate on the selected block; the weight solves
    (R_S' R_S) w = r_c R_S' 1. A singular selected Gram is a hard error.
    """
    idx, block = _selected_block(panel, selected)
    theta = plugin_theta(ReturnPanel(block))
    r_c = inflated_response(rho_bar, theta)
    try:
        coef = spd_solve(block.T @ block, block.T @ np.ones(block.shape[0]))
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"selected Gram matrix is singular: {exc}"
        ) from exc
    dense = np.zeros(panel.n_assets)
    dense[idx] = r_c * coef
    return WeightVector.from_dense(dense, rho_bar)


def plugin_weights(panel: ReturnPanel, selected, rho_bar: float) -> WeightVector:
    """(rho/theta) Sigma^{-1} mu on the selected block, zeros elsewhere."""
    idx, block = _selected_block(panel, selected)
    sub = ReturnPanel(block)
    theta = plugin_theta(sub)
    if theta <= 0:
        raise DegenerateModelError("plug-in squared Sharpe ratio is not positive")
    m = sample_moments(sub)
    coef = (rho_bar / theta) * spd_solve(m.cov, m.mean)
    dense = np.zeros(panel.n_assets)
    dense[idx] = coef
    return WeightVector.from_dense(dense, rho_bar)


@dataclass
class SubpoolConfig:
    """Random sub-pool selection used when the universe outsizes the sample."""

    size: int = 100
    draws: int = 1000
    seed: int = 0


def subpool_rank(draws: int) -> int:
    """How many candidates rank at or above the 95th percentile.

    The kept subset is the subpool_rank(draws)-th highest by in-sample
    Sharpe (the 50th highest for 1000 draws).
    """
    return max(1, int(round(0.05 * draws)))


def select_subpool(panel: ReturnPanel, cfg: SubpoolConfig) -> np.ndarray:
    """Draw random asset subsets and keep the one at the 95th Sharpe percentile."""
    t, n = panel.values.shape
    size = min(cfg.size, n)
    if size >= t:
        raise RegimeError(f"sub-pool size {size} is not below T={t}")
    m = sample_moments(panel)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_SUBPOOL_STREAM,))
    )
    subsets = [np.sort(rng.choice(n, size=size, replace=False))
               for _ in range(cfg.draws)]
    sharpes = np.empty(cfg.draws)
    for i, idx in enumerate(subsets):
        cov = m.cov[np.ix_(idx, idx)]
        mean = m.mean[idx]
        try:
            cho = linalg.cho_factor(cov, lower=True, check_finite=False)
            theta_s = float(mean @ linalg.cho_solve(cho, mean, check_finite=False))
        except linalg.LinAlgError:
            theta_s = -np.inf
        sharpes[i] = np.sqrt(max(theta_s, 0.0)) if np.isfinite(theta_s) else -np.inf
    order = np.argsort(-sharpes, kind="stable")
    return subsets[order[subpool_rank(cfg.draws) - 1]]


def _conventional_cv_lambda(vals: np.ndarray, response: np.ndarray,
                            folds: int, grid_size: int, grid_ratio: float,
                            seed: int) -> tuple[float, np.ndarray]:
    """Plain k-fold CV on the Lasso's own prediction error.

    Unlike the screening CV there is no OLS refit and no size cap; this is
    the tuning rule of the single-step baseline. Returns (lambda, full-fit
    coefficients at lambda).
    """
    t = vals.shape[0]
    grid = lambda_grid(vals, response, grid_size, grid_ratio)
    fold_idx = make_folds(
        t, folds, np.random.SeedSequence(entropy=seed, spawn_key=(_MAXSER_FOLD_STREAM,))
    )
    gram_full = vals.T @ vals
    xz_full = vals.T @ response
    err = np.zeros(grid.size)
    for test_idx in fold_idx:
        vals_test = vals[test_idx]
        t_tr = t - test_idx.size
        gram_tr = (gram_full - vals_test.T @ vals_test) / t_tr
        xz_tr = (xz_full - vals_test.T @ response[test_idx]) / t_tr
        betas = lasso_path_gram(gram_tr, xz_tr, grid)
        pred = vals_test @ betas.T                    # |test| x M
        err += np.mean((response[test_idx, None] - pred) ** 2, axis=0)
    best = int(np.argmin(err))  # ties: argmin returns the first = larger lambda
    betas = lasso_path_gram(gram_full / t, xz_full / t, grid[: best + 1])
    return float(grid[best]), betas[-1]


def maxser_weights(panel: ReturnPanel, rho_bar: float,
                   lam: float | None = None,
                   subpool: SubpoolConfig | None = None,
                   cv_folds: int = 10, grid_size: int = 100,
                   grid_ratio: float = 1e-3) -> WeightVector:
    """Single-step penalized regression on the inflated constant response.

    When the universe is too large for the bias-corrected theta estimate
    (N >= T - 2), estimation runs on a random sub-pool picked by in-sample
    Sharpe percentile. The penalty is the given lam, or chosen by
    conventional k-fold CV on the Lasso residual when lam is None.
    """
    t, n = panel.values.shape
    subpool = subpool or SubpoolConfig()
    if n >= t - 2:
        pool = select_subpool(panel, subpool)
    else:
        pool = np.arange(n)
    block = panel.values[:, pool]
    theta_s = plugin_theta(ReturnPanel(block))
    theta = kan_zhou_theta(theta_s, t, pool.size)
    r_c = inflated_response(rho_bar, theta)
    response = np.full(t, r_c)
    if lam is None:
        _, coef = _conventional_cv_lambda(
            block, response, cv_folds, grid_size, grid_ratio, subpool.seed
        )
    else:
        coef = lasso_fit(LassoProblem(block, response, lam)).coefficients
    dense = np.zeros(n)
    dense[pool] = coef
    return WeightVector.from_dense(dense, rho_bar)


def fps2_weights(panel: ReturnPanel, factors, selected, rho_bar: float,
                 ell: int) -> AugmentedWeights:
    """Factor-augmented OLS weights on the last ell observations.

    Stacks the selected asset columns with the factor columns, estimates
    theta by the bias-corrected estimator on that block, and regresses the
    inflated response on it. The asset block lands on the selected indices;
    the factor block is dense.
    """
    x = factors.values if hasattr(factors, "values") else np.asarray(factors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != panel.n_periods:
        raise ValueError("factor matrix must have one row per panel period")
    idx = np.asarray(selected, dtype=np.intp)
    t = panel.n_periods
    k = x.shape[1]
    if ell > t:
        raise RegimeError(f"estimation window ell={ell} exceeds T={t}")
    width = idx.size + k
    if width == 0:
        raise EmptyScreenError("no selected assets and no factors")
    if width >= ell - 2:
        raise RegimeError(
            f"need |selected| + K < ell - 2, got {width} with ell={ell}"
        )
    block = np.hstack([panel.values[:, idx], x])[t - ell:]
    theta_s = plugin_theta(ReturnPanel(block))
    theta = kan_zhou_theta(theta_s, ell, width)
    r_c = inflated_response(rho_bar, theta)
    coef = r_c * spd_solve(block.T @ block, block.T @ np.ones(ell))
    dense = np.zeros(panel.n_assets)
    dense[idx] = coef[: idx.size]
    asset = WeightVector.from_dense(dense, rho_bar)
    return AugmentedWeights(asset_block=asset, factor_block=coef[idx.size:])
