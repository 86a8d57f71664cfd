"""Sample moments, SPD solves, and squared-Sharpe estimators.

Conventions: the covariance uses divisor T-1; the (uncentered) second-moment
matrix is R'R/T, so gram = cov*(T-1)/T + outer(mean, mean) holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InsufficientDataError, RegimeError, SingularMatrixError
from .panels import ReturnPanel

THETA_FLOOR = 1e-6


@dataclass
class MomentSummary:
    mean: np.ndarray     # (N,)
    cov: np.ndarray      # (N, N), divisor T-1
    gram: np.ndarray     # (N, N), R'R/T


def sample_moments(panel: ReturnPanel) -> MomentSummary:
    """Column means, sample covariance (divisor T-1), and R'R/T."""
    vals = panel.values
    t = vals.shape[0]
    if t < 2:
        raise InsufficientDataError(f"need T >= 2 observations, got {t}")
    mean = vals.mean(axis=0)
    centered = vals - mean
    cov = centered.T @ centered / (t - 1)
    gram = vals.T @ vals / t
    return MomentSummary(mean=mean, cov=cov, gram=gram)


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky.

    Fails loudly on a non-SPD matrix; no pseudo-inverse fallback, so
    singular screened designs surface as errors instead of silent noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > 1e-8 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    try:
        cho = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Cholesky factorization failed: {exc}") from exc
    return linalg.cho_solve(cho, b, check_finite=False)


def plugin_theta(panel: ReturnPanel) -> float:
    """Plug-in squared Sharpe ratio mu' cov^{-1} mu of the panel's assets."""
    t, n = panel.values.shape
    if n >= t:
        raise RegimeError(f"plug-in theta needs N < T, got N={n}, T={t}")
    m = sample_moments(panel)
    x = spd_solve(m.cov, m.mean)
    return float(m.mean @ x)


def kan_zhou_theta(theta_s: float, t: int, n: int) -> float:
    """Bias-corrected squared Sharpe ((T-N-2) theta_s - N) / T, floored.

    The floor keeps the inflated response rho*(1+theta)/theta finite when
    the raw correction goes nonpositive.
    """
    if n >= t - 2:
        raise RegimeError(f"bias correction needs N < T - 2, got N={n}, T={t}")
    raw = ((t - n - 2) * theta_s - n) / t
    return max(raw, THETA_FLOOR)
