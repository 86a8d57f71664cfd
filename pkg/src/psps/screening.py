"""Asset screening: perturbed constant response, CV over the penalty grid,
and the screened index set.

Selection minimizes the cross-validated prediction error of a second-stage
OLS refit on each candidate's active set, not the Lasso's own residual.
Candidates whose active set exceeds T(k-2)/k in any fold are filtered out to
keep those refits well-posed. Ties favor the larger (sparser) penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import EmptyScreenError, InsufficientDataError, NoValidLambdaError
from .lasso import adaptive_weights, lambda_grid, lasso_path_gram
from .panels import ReturnPanel

_RESPONSE_STREAM = 0
_FOLD_STREAM = 1


@dataclass
class ScreenConfig:
    """Knobs for the screening step (defaults follow the simulation setup)."""

    alpha: float = 0.05       # response level
    tau: float = 1e-4         # response perturbation sd (1e-10 for backtests)
    seed: int = 0
    grid_size: int = 100
    grid_ratio: float = 1e-3
    folds: int = 10
    method: str = "lasso"     # "lasso" or "adaptive"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.grid_size < 1:
            raise ValueError("grid size must be >= 1")
        if self.method not in ("lasso", "adaptive"):
            raise ValueError(f"unknown screening method {self.method!r}")


@dataclass
class CvRecord:
    lam: float
    error: float | None   # summed fold-mean error / k; None when filtered
    filtered: bool


@dataclass
class ScreeningResult:
    selected: np.ndarray          # sorted asset indices
    lambda_star: float
    cv: list[CvRecord] = field(default_factory=list)

    @property
    def cv_errors(self) -> dict[float, float | None]:
        return {rec.lam: rec.error for rec in self.cv}

    @property
    def filtered(self) -> list[float]:
        return [rec.lam for rec in self.cv if rec.filtered]

    def to_dict(self) -> dict:
        return {
            "selected": [int(j) for j in self.selected],
            "lambda_star": float(self.lambda_star),
            "cv": [
                {
                    "lambda": float(rec.lam),
                    "error": None if rec.error is None else float(rec.error),
                    "filtered": rec.filtered,
                }
                for rec in self.cv
            ],
        }


def perturbed_response(t: int, cfg: ScreenConfig) -> np.ndarray:
    """Length-T draw of N(alpha, tau^2), deterministic under cfg.seed."""
    if t < 1:
        raise InsufficientDataError("need T >= 1 to build a response")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_RESPONSE_STREAM,))
    )
    return cfg.alpha + cfg.tau * rng.standard_normal(t)


def make_folds(t: int, k: int, rng) -> list[np.ndarray]:
    """Partition {0,..,T-1} into k contiguous blocks of a seeded shuffle."""
    if k > t:
        raise InsufficientDataError(f"cannot split T={t} rows into k={k} folds")
    perm = np.random.default_rng(rng).permutation(t)
    return [np.sort(block) for block in np.array_split(perm, k)]


def _ols_on_subset(gram_tr, xz_tr, active):
    """Training OLS coefficients of z on the selected columns."""
    g = gram_tr[np.ix_(active, active)]
    b = xz_tr[active]
    try:
        cho = linalg.cho_factor(g, lower=True, check_finite=False)
        return linalg.cho_solve(cho, b, check_finite=False)
    except linalg.LinAlgError:
        # collinear selection inside a fold: fall back to least squares
        return np.linalg.lstsq(g, b, rcond=None)[0]


def cv_select_lambda(panel: ReturnPanel, z: np.ndarray, grid: np.ndarray,
                     cfg: ScreenConfig,
                     weights: np.ndarray | None = None
                     ) -> tuple[float, list[CvRecord]]:
    """Pick the penalty by k-fold CV on the post-selection OLS error.

    For each fold and candidate: fit the Lasso on the training rows, refit
    OLS of z on the active training columns, and score the held-out rows by
    the squared gap between alpha and the OLS prediction (an empty active
    set predicts zero, contributing alpha^2 per point). Candidates whose
    active set exceeds T(k-2)/k in any fold are discarded.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    vals = panel.values
    t = vals.shape[0]
    if cfg.folds > t:
        raise InsufficientDataError(f"folds={cfg.folds} exceeds T={t}")
    folds = make_folds(
        t, cfg.folds,
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_FOLD_STREAM,)),
    )
    cap = t * (cfg.folds - 2) / cfg.folds

    gram_full = vals.T @ vals
    xz_full = vals.T @ z
    m = grid.size
    err_sum = np.zeros(m)
    filtered = np.zeros(m, dtype=bool)

    for test_idx in folds:
        vals_test = vals[test_idx]
        t_tr = t - test_idx.size
        gram_tr = (gram_full - vals_test.T @ vals_test) / t_tr
        xz_tr = (xz_full - vals_test.T @ z[test_idx]) / t_tr
        betas = lasso_path_gram(gram_tr, xz_tr, grid, weights=weights)
        for i in range(m):
            active = np.flatnonzero(betas[i])
            if active.size > cap:
                filtered[i] = True
                continue
            if filtered[i]:
                continue
            if active.size == 0:
                err_sum[i] += cfg.alpha ** 2
                continue
            coef = _ols_on_subset(gram_tr, xz_tr, active)
            pred = vals_test[:, active] @ coef
            err_sum[i] += np.mean((cfg.alpha - pred) ** 2)

    if filtered.all():
        raise NoValidLambdaError(
            "every candidate exceeded the active-set size cap in some fold"
        )
    best = None
    for i in range(m):  # grid is decreasing, so first win = largest lambda
        if filtered[i]:
            continue
        if best is None or err_sum[i] < err_sum[best]:
            best = i
    records = [
        CvRecord(
            lam=float(grid[i]),
            error=None if filtered[i] else float(err_sum[i] / cfg.folds),
            filtered=bool(filtered[i]),
        )
        for i in range(m)
    ]
    return float(grid[best]), records


def _refit_path(vals, z, grid, lam_star, weights=None):
    """Full-sample warm-started path down to lam_star; returns coefficients."""
    t = vals.shape[0]
    gram = vals.T @ vals / t
    xz = vals.T @ z / t
    matches = np.flatnonzero(grid == lam_star)
    stop = int(matches[0]) if matches.size else int(np.abs(grid - lam_star).argmin())
    betas = lasso_path_gram(gram, xz, grid[: stop + 1], weights=weights)
    return betas[-1]


def screen(panel: ReturnPanel, cfg: ScreenConfig) -> ScreeningResult:
    """End-to-end screening: response, grid, CV, full-sample refit.

    The adaptive variant runs the plain pipeline as a pilot, reweights the
    penalty by reciprocal pilot magnitudes on the surviving columns, and
    repeats grid construction + CV + refit with the weighted penalty.
    """
    vals = panel.values
    t = vals.shape[0]
    z = perturbed_response(t, cfg)
    grid = lambda_grid(vals, z, cfg.grid_size, cfg.grid_ratio)
    lam_star, records = cv_select_lambda(panel, z, grid, cfg)
    beta = _refit_path(vals, z, grid, lam_star)

    if cfg.method == "adaptive":
        gamma, _ = adaptive_weights(beta)
        included = np.flatnonzero(beta)
        sub = vals[:, included]
        lam_max = (np.abs(sub.T @ z) / t / gamma).max()
        if cfg.grid_size == 1:
            wgrid = np.array([lam_max])
        else:
            wgrid = lam_max * cfg.grid_ratio ** (
                np.arange(cfg.grid_size) / (cfg.grid_size - 1)
            )
        sub_panel = ReturnPanel(sub)
        lam_star, records = cv_select_lambda(sub_panel, z, wgrid, cfg, weights=gamma)
        beta_w = _refit_path(sub, z, wgrid, lam_star, weights=gamma)
        selected = included[np.flatnonzero(beta_w)]
    else:
        selected = np.flatnonzero(beta)

    if selected.size == 0:
        raise EmptyScreenError("screening selected no assets")
    return ScreeningResult(selected=np.sort(selected), lambda_star=lam_star,
                           cv=records)
