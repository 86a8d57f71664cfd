"""Removal of observable factors while retaining the residual mean.

The loading regression uses the column-demeaned factor matrix, but the
residual subtracts the raw factor component only: U = R - X A'. This is the
slope-only part of an OLS with intercept, so the residual keeps its mean
component instead of being centered away, which is what makes the
subsequent mean-sensitive screening step work.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import CollinearFactorError, InsufficientDataError
from .panels import FactorPanel, ReturnPanel


def defactor(panel: ReturnPanel, factors: FactorPanel) -> tuple[ReturnPanel, np.ndarray]:
    """Regress returns on demeaned factors; return (residual panel, loadings).

    Loadings solve (X~'X~) A' = X~'R with X~ the demeaned factor matrix,
    one factorization shared across all N columns. The exact identity
    X~'U = 0 holds for the output since X~'X = X~'X~.
    """
    r = panel.values
    x = factors.values
    t, k = x.shape
    if r.shape[0] != t:
        raise ValueError(
            f"factor rows ({t}) do not match return rows ({r.shape[0]})"
        )
    if t <= k:
        raise InsufficientDataError(f"need T > K, got T={t}, K={k}")
    x_dm = x - x.mean(axis=0)
    g = x_dm.T @ x_dm
    eigs = np.linalg.eigvalsh(g)
    if eigs[0] <= 1e-12 * max(eigs[-1], np.finfo(float).tiny):
        raise CollinearFactorError("demeaned factors are collinear or constant")
    try:
        cho = linalg.cho_factor(g, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise CollinearFactorError(
            "demeaned factors are collinear or constant"
        ) from exc
    loadings_t = linalg.cho_solve(cho, x_dm.T @ r, check_finite=False)  # K x N
    residuals = r - x @ loadings_t
    out = ReturnPanel(residuals, dates=panel.dates, tickers=panel.tickers)
    return out, loadings_t.T
