"""Weighted L1-penalized least squares by cyclic coordinate descent.

Objective: T^{-1} ||z - X b||_2^2 + 2 lambda sum_j gamma_j |b_j|, with unit
weights gamma by default. The factor 2 on the penalty is part of the
parameterization contract: reported lambda values are comparable across the
screening and portfolio layers. Columns are used as-is (no internal
standardization).

Solvers run on the Gram form (X'X/T, X'z/T) so cross-validation folds can
share precomputed moments; warm starts along a decreasing lambda grid give
deterministic paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import cd_sweeps
from .errors import (
    DegenerateGridError,
    EmptyModelError,
    IterationLimitError,
    SingularDesignError,
)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


@dataclass
class LassoProblem:
    """Design, response, penalty level, and optional positive weights."""

    design: np.ndarray                 # (T, p)
    response: np.ndarray               # (T,)
    lam: float
    weights: np.ndarray | None = None  # (p,), all > 0

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=np.float64)
        self.response = np.asarray(self.response, dtype=np.float64)
        if self.design.ndim != 2:
            raise ValueError("design must be a T x p matrix")
        if self.response.shape != (self.design.shape[0],):
            raise ValueError("response length must match the design rows")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.design.shape[1],):
                raise ValueError("weights length must match the design columns")
            if np.any(self.weights <= 0):
                raise ValueError("all penalty weights must be positive")


@dataclass
class LassoSolution:
    coefficients: np.ndarray
    active_set: np.ndarray = field(init=False)
    iterations: int = 0
    kkt_residual: float = np.nan

    def __post_init__(self):
        self.active_set = np.flatnonzero(self.coefficients)


def _gram_arrays(design, response):
    t = design.shape[0]
    gram = design.T @ design / t
    xz = design.T @ response / t
    return gram, xz


def _fit_gram(gram, xz, penalties, beta0, tol, max_iter):
    """Run the CD kernel from a warm start; returns (beta, sweeps, converged)."""
    beta = np.array(beta0, dtype=np.float64, copy=True)
    resid_corr = xz - gram @ beta
    sweeps, _, converged = cd_sweeps(
        gram, xz, penalties, beta, resid_corr, tol, max_iter
    )
    return beta, sweeps, converged


def _kkt_from_corr(resid_corr, penalties, beta):
    active = beta != 0.0
    res = 0.0
    if np.any(active):
        res = np.abs(resid_corr[active] - penalties[active] * np.sign(beta[active])).max()
    if np.any(~active):
        slack = np.abs(resid_corr[~active]) - penalties[~active]
        res = max(res, max(slack.max(), 0.0))
    return float(res)


def lasso_fit(problem: LassoProblem,
              tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> LassoSolution:
    """Solve the penalized problem by cyclic coordinate descent.

    Converged when the largest coefficient change in a sweep is <= tol.
    Raises IterationLimitError (carrying the last iterate) past max_iter,
    and SingularDesignError for a zero-norm column left unpenalized.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    gram, xz = _gram_arrays(problem.design, problem.response)
    penalties = _penalty_vector(problem)
    if problem.lam == 0.0 and np.any(np.diag(gram) <= 0.0):
        raise SingularDesignError("zero-norm design column with lambda = 0")
    beta, sweeps, converged = _fit_gram(
        gram, xz, penalties, np.zeros(gram.shape[0]), tol, max_iter
    )
    kkt = _kkt_from_corr(xz - gram @ beta, penalties, beta)
    if not converged:
        raise IterationLimitError(
            f"no convergence within {max_iter} sweeps (kkt residual {kkt:.3e})",
            last_iterate=beta,
            iterations=sweeps,
        )
    sol = LassoSolution(coefficients=beta, iterations=sweeps)
    sol.kkt_residual = kkt
    return sol


def _penalty_vector(problem: LassoProblem) -> np.ndarray:
    p = problem.design.shape[1]
    if problem.weights is None:
        return np.full(p, problem.lam, dtype=np.float64)
    return problem.lam * problem.weights


def kkt_residual(problem: LassoProblem, beta: np.ndarray) -> float:
    """Worst-case violation of the subgradient stationarity conditions.

    Active coordinates: |X_j'(z - Xb)/T - lambda gamma_j sign(b_j)|.
    Inactive ones: max(|X_j'(z - Xb)/T| - lambda gamma_j, 0).
    """
    beta = np.asarray(beta, dtype=np.float64)
    resid = problem.response - problem.design @ beta
    corr = problem.design.T @ resid / problem.design.shape[0]
    return _kkt_from_corr(corr, _penalty_vector(problem), beta)


def lasso_objective(problem: LassoProblem, beta: np.ndarray) -> float:
    """Penalized objective value at beta (used by monotonicity checks)."""
    beta = np.asarray(beta, dtype=np.float64)
    resid = problem.response - problem.design @ beta
    fit = resid @ resid / problem.design.shape[0]
    pen_w = problem.weights if problem.weights is not None else 1.0
    return float(fit + 2.0 * problem.lam * np.sum(pen_w * np.abs(beta)))


def lambda_grid(design: np.ndarray, response: np.ndarray,
                m: int, ratio: float = 1e-3) -> np.ndarray:
    """Geometric grid from lambda_max = ||X'z/T||_inf down to ratio*lambda_max."""
    if m < 1:
        raise ValueError("grid size must be >= 1")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    lam_max = np.abs(design.T @ response).max() / design.shape[0]
    if lam_max <= 0.0:
        raise DegenerateGridError("X'z is identically zero; no usable grid")
    if m == 1:
        return np.array([lam_max])
    return lam_max * ratio ** (np.arange(m) / (m - 1))


def adaptive_weights(pilot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reciprocal-magnitude penalty weights from a pilot coefficient vector.

    Returns (weights over the surviving coordinates, excluded indices);
    coordinates with a zero pilot are excluded and stay zero downstream.
    """
    pilot = np.asarray(pilot, dtype=np.float64)
    included = np.flatnonzero(pilot)
    if included.size == 0:
        raise EmptyModelError("pilot vector is identically zero")
    excluded = np.setdiff1d(np.arange(pilot.size), included)
    return 1.0 / np.abs(pilot[included]), excluded


def lasso_path_gram(gram: np.ndarray, xz: np.ndarray, grid: np.ndarray,
                    weights: np.ndarray | None = None,
                    tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Warm-started solutions along a decreasing grid, from Gram moments.

    Returns an (len(grid), p) coefficient array. Cyclic order plus warm
    starts make the path deterministic for identical inputs.
    """
    p = gram.shape[0]
    gamma = np.ones(p) if weights is None else np.asarray(weights, dtype=np.float64)
    betas = np.empty((len(grid), p))
    beta = np.zeros(p)
    for i, lam in enumerate(grid):
        beta, sweeps, converged = _fit_gram(gram, xz, lam * gamma, beta, tol, max_iter)
        if not converged:
            raise IterationLimitError(
                f"path fit at lambda={lam:.3e} hit the {max_iter}-sweep limit",
                last_iterate=beta,
                iterations=sweeps,
            )
        betas[i] = beta
    return betas
