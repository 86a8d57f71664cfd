import numpy as np
import pytest

from psps.defactor import defactor
from psps.errors import CollinearFactorError, InsufficientDataError
from psps.panels import FactorPanel, ReturnPanel


def _factor_data(rng, t, n, k, loading_scale=1.0, mu_u=None):
    loadings = loading_scale * rng.standard_normal((n, k))
    x = rng.standard_normal((t, k)) + rng.normal(size=k)
    mean = np.zeros(n) if mu_u is None else mu_u
    r = x @ loadings.T + mean + rng.standard_normal((t, n))
    return ReturnPanel(r), FactorPanel(x), loadings


@pytest.mark.parametrize("seed", range(5))
def test_demeaned_factor_orthogonality(seed):
    rng = np.random.default_rng(seed)
    panel, factors, _ = _factor_data(rng, 80, 6, 2,
                                     mu_u=rng.normal(size=6))
    residuals, _ = defactor(panel, factors)
    x_dm = factors.values - factors.values.mean(axis=0)
    assert np.abs(x_dm.T @ residuals.values).max() < 1e-10


def test_constant_factor_column_rejected():
    rng = np.random.default_rng(1)
    panel = ReturnPanel(rng.standard_normal((40, 3)))
    factors = FactorPanel(np.column_stack([
        rng.standard_normal(40), np.full(40, 0.7)
    ]))
    with pytest.raises(CollinearFactorError):
        defactor(panel, factors)


def test_zero_loadings_estimated_near_zero():
    rng = np.random.default_rng(2)
    panel, factors, _ = _factor_data(rng, 50_000, 4, 2, loading_scale=0.0)
    residuals, loadings = defactor(panel, factors)
    assert np.abs(loadings).max() <= 0.05
    assert np.abs(residuals.values - panel.values).max() < 0.5


def test_idempotent_on_residuals():
    rng = np.random.default_rng(3)
    panel, factors, _ = _factor_data(rng, 100, 5, 2)
    residuals, _ = defactor(panel, factors)
    residuals2, loadings2 = defactor(residuals, factors)
    assert np.abs(loadings2).max() < 1e-10
    assert np.abs(residuals2.values - residuals.values).max() < 1e-9


def test_residual_mean_component_retained():
    rng = np.random.default_rng(4)
    mu_u = np.array([0.5, -0.3, 0.8, 0.2])
    panel, factors, _ = _factor_data(rng, 5000, 4, 2, mu_u=mu_u)
    residuals, _ = defactor(panel, factors)
    col_means = residuals.values.mean(axis=0)
    assert np.abs(col_means).max() > 0.1  # not demeaned away
    assert np.allclose(col_means, mu_u, atol=0.15)


def test_loading_recovery():
    rng = np.random.default_rng(5)
    panel, factors, loadings = _factor_data(rng, 20_000, 3, 2)
    _, estimated = defactor(panel, factors)
    assert np.abs(estimated - loadings).max() < 0.05


def test_needs_more_rows_than_factors():
    rng = np.random.default_rng(6)
    panel = ReturnPanel(rng.standard_normal((2, 3)))
    factors = FactorPanel(rng.standard_normal((2, 2)))
    with pytest.raises(InsufficientDataError):
        defactor(panel, factors)


def test_row_mismatch_rejected():
    rng = np.random.default_rng(7)
    panel = ReturnPanel(rng.standard_normal((30, 3)))
    factors = FactorPanel(rng.standard_normal((29, 2)))
    with pytest.raises(ValueError):
        defactor(panel, factors)
