import numpy as np
import pytest

from psps.errors import (
    ConfigError,
    EmptyScreenError,
    RegimeError,
    SingularMatrixError,
    UndefinedRatioError,
)
from psps.moments import kan_zhou_theta, plugin_theta
from psps.panels import ReturnPanel
from psps.portfolio import (
    PopulationModel,
    SubpoolConfig,
    WeightVector,
    augmented_moments,
    beta_target,
    fps2_weights,
    inflated_response,
    maxser_weights,
    plugin_weights,
    population_aug_weights,
    population_mvp_weight,
    portfolio_sharpe,
    post_screen_ols_weights,
    select_subpool,
    sharpe_from_moments,
    subpool_rank,
)

RHO = 0.05


def _random_model(rng, n):
    a = rng.standard_normal((n, n))
    sigma = a @ a.T + n * np.eye(n)
    mu = rng.standard_normal(n)
    return PopulationModel(mu=mu, sigma=sigma)


def _factor_model(rng, n, k, loadings=None):
    au = rng.standard_normal((n, n))
    ax = rng.standard_normal((k, k))
    a = rng.standard_normal((n, k)) if loadings is None else loadings
    mu_x = rng.standard_normal(k)
    sigma_x = ax @ ax.T + k * np.eye(k)
    mu_u = rng.standard_normal(n)
    sigma_u = au @ au.T + n * np.eye(n)
    return PopulationModel(
        mu=a @ mu_x + mu_u,
        sigma=a @ sigma_x @ a.T + sigma_u,
        loadings=a, mu_x=mu_x, sigma_x=sigma_x, mu_u=mu_u, sigma_u=sigma_u,
    )


def test_mvp_diagonal_case():
    model = PopulationModel(mu=np.array([0.2, 0.0, 0.0]), sigma=np.eye(3))
    w = population_mvp_weight(model, RHO, "mvp").to_dense()
    assert np.allclose(w, [RHO / 0.2, 0.0, 0.0], atol=1e-14)


def test_bj_is_scaled_mvp():
    rng = np.random.default_rng(0)
    model = _random_model(rng, 6)
    theta = model.theta()
    w_mvp = population_mvp_weight(model, RHO, "mvp").to_dense()
    w_bj = population_mvp_weight(model, RHO, "bj").to_dense()
    assert np.allclose(w_bj, w_mvp * theta / (1.0 + theta), atol=1e-12)


def test_mvp_hits_target_return():
    rng = np.random.default_rng(1)
    model = _random_model(rng, 5)
    w = population_mvp_weight(model, RHO, "mvp").to_dense()
    assert w @ model.mu == pytest.approx(RHO, abs=1e-12)


def test_beta_target_identity():
    rng = np.random.default_rng(2)
    model = _random_model(rng, 5)
    direction = np.linalg.solve(model.sigma, model.mu)  # brute-force oracle
    theta = model.mu @ direction
    omega_mu = np.linalg.solve(model.sigma + np.outer(model.mu, model.mu), model.mu)
    assert np.abs(direction - (1 + theta) * omega_mu).max() < 1e-10
    beta = beta_target(model, 0.7)
    assert np.allclose(beta, 0.7 * omega_mu, atol=1e-12)


def test_beta_target_support_matches_weight():
    rng = np.random.default_rng(3)
    model = _random_model(rng, 6)
    w = population_mvp_weight(model, RHO, "mvp").to_dense()
    beta = beta_target(model, 1.0)
    assert np.array_equal(np.abs(w) > 1e-12, np.abs(beta) > 1e-12)


def test_beta_target_zero_pattern_diagonal():
    model = PopulationModel(mu=np.array([0.3, 0.0]), sigma=np.diag([1.0, 2.0]))
    beta = beta_target(model, 1.0)
    assert beta[1] == pytest.approx(0.0, abs=1e-15)
    assert beta[0] != 0.0


def test_beta_target_rejects_zero_alpha():
    model = PopulationModel(mu=np.array([0.1]), sigma=np.eye(1))
    with pytest.raises(ValueError):
        beta_target(model, 0.0)


def test_aug_weights_decouple_when_loadings_zero():
    rng = np.random.default_rng(4)
    model = _factor_model(rng, 4, 2, loadings=np.zeros((4, 2)))
    aug = population_aug_weights(model, RHO)
    du = np.linalg.solve(model.sigma_u, model.mu_u)
    dx = np.linalg.solve(model.sigma_x, model.mu_x)
    theta_aug = model.mu_u @ du + model.mu_x @ dx
    assert np.allclose(aug.factor_block, RHO / theta_aug * dx, atol=1e-12)
    assert np.allclose(aug.asset_block.to_dense(), RHO / theta_aug * du, atol=1e-12)


def test_aug_weights_match_brute_force():
    rng = np.random.default_rng(5)
    model = _factor_model(rng, 5, 2)
    aug = population_aug_weights(model, RHO)
    mu_aug, sigma_aug = augmented_moments(model)
    direction = np.linalg.solve(sigma_aug, mu_aug)
    w_star = RHO / (mu_aug @ direction) * direction
    assert np.abs(aug.to_dense() - w_star).max() < 1e-8


def test_aug_weights_need_factor_block():
    model = PopulationModel(mu=np.array([0.1]), sigma=np.eye(1))
    with pytest.raises(ConfigError):
        population_aug_weights(model, RHO)


def test_post_screen_full_selection_matches_normal_equations():
    rng = np.random.default_rng(6)
    vals = rng.standard_normal((80, 5)) + 0.2
    panel = ReturnPanel(vals)
    w = post_screen_ols_weights(panel, list(range(5)), RHO).to_dense()
    theta = plugin_theta(panel)
    r_c = inflated_response(RHO, theta)
    oracle = r_c * np.linalg.solve(vals.T @ vals, vals.T @ np.ones(80))
    assert np.abs(w - oracle).max() < 1e-8


def test_post_screen_support_containment():
    rng = np.random.default_rng(7)
    panel = ReturnPanel(rng.standard_normal((60, 8)) + 0.1)
    w = post_screen_ols_weights(panel, [1, 4, 6], RHO)
    assert set(w.support.tolist()) <= {1, 4, 6}
    dense = w.to_dense()
    assert np.all(dense[[0, 2, 3, 5, 7]] == 0.0)


def test_post_screen_dimension_guard():
    rng = np.random.default_rng(8)
    panel = ReturnPanel(rng.standard_normal((5, 8)))
    with pytest.raises(RegimeError):
        post_screen_ols_weights(panel, list(range(5)), RHO)


def test_post_screen_empty_selection():
    panel = ReturnPanel(np.ones((10, 2)))
    with pytest.raises(EmptyScreenError):
        post_screen_ols_weights(panel, [], RHO)


def test_post_screen_singular_gram_is_hard_error():
    rng = np.random.default_rng(9)
    col = rng.standard_normal(40)
    vals = np.column_stack([col, col])  # exactly collinear
    with pytest.raises(SingularMatrixError):
        post_screen_ols_weights(ReturnPanel(vals), [0, 1], RHO)


def test_plugin_weights_single_asset_scalar_formula():
    rng = np.random.default_rng(10)
    vals = (0.08 + 0.02 * rng.standard_normal(200)).reshape(-1, 1)
    panel = ReturnPanel(vals)
    w = plugin_weights(panel, [0], RHO).to_dense()
    assert w[0] == pytest.approx(RHO / vals.mean(), rel=1e-10)


def test_plugin_weights_hit_sample_target():
    rng = np.random.default_rng(11)
    vals = rng.standard_normal((100, 4)) + np.array([0.3, 0.1, -0.2, 0.05])
    panel = ReturnPanel(vals)
    w = plugin_weights(panel, [0, 1, 2, 3], RHO).to_dense()
    assert w @ vals.mean(axis=0) == pytest.approx(RHO, abs=1e-10)


def test_plugin_weights_empty_selection():
    with pytest.raises(EmptyScreenError):
        plugin_weights(ReturnPanel(np.ones((10, 2))), [], RHO)


def test_maxser_zero_above_lambda_max():
    rng = np.random.default_rng(12)
    panel = ReturnPanel(rng.standard_normal((120, 6)) + 0.3)
    w = maxser_weights(panel, RHO, lam=1e9)
    assert w.support.size == 0
    assert np.all(w.to_dense() == 0.0)


def test_maxser_recovers_signal_with_cv():
    rng = np.random.default_rng(13)
    vals = rng.standard_normal((300, 8))
    vals[:, :2] += 0.5
    w = maxser_weights(ReturnPanel(vals), RHO)
    assert {0, 1} <= set(w.support.tolist())


def test_subpool_rank_percentile():
    assert subpool_rank(1000) == 50
    assert subpool_rank(1) == 1
    assert subpool_rank(20) == 1


def test_subpool_single_draw_is_kept():
    rng = np.random.default_rng(14)
    panel = ReturnPanel(rng.standard_normal((50, 60)) + 0.1)
    cfg = SubpoolConfig(size=10, draws=1, seed=3)
    pool = select_subpool(panel, cfg)
    rng2 = np.random.default_rng(
        np.random.SeedSequence(entropy=3, spawn_key=(2,))
    )
    expected = np.sort(rng2.choice(60, size=10, replace=False))
    assert np.array_equal(pool, expected)


def test_maxser_subpool_defaults_match_convention():
    cfg = SubpoolConfig()
    assert cfg.size == 100
    assert cfg.draws == 1000


def test_maxser_triggers_subpool_when_wide():
    rng = np.random.default_rng(15)
    vals = rng.standard_normal((60, 80)) + 0.1
    w = maxser_weights(ReturnPanel(vals), RHO, lam=1e-4,
                       subpool=SubpoolConfig(size=20, draws=25, seed=1))
    assert w.support.size <= 20


def test_fps2_zero_factor_block_matches_post_ols_direction():
    rng = np.random.default_rng(16)
    vals = rng.standard_normal((150, 6)) + 0.2
    panel = ReturnPanel(vals)
    sel = [0, 2, 5]
    ell = 100
    aug = fps2_weights(panel, np.empty((150, 0)), sel, RHO, ell)
    assert aug.factor_block.size == 0
    tail = ReturnPanel(vals[-ell:])
    ols = post_screen_ols_weights(tail, sel, RHO)
    # same OLS direction; the inflated responses differ only through the
    # bias correction applied to theta
    theta_plug = plugin_theta(ReturnPanel(vals[-ell:, sel]))
    theta_kz = kan_zhou_theta(theta_plug, ell, len(sel))
    ratio = inflated_response(RHO, theta_kz) / inflated_response(RHO, theta_plug)
    assert np.allclose(aug.asset_block.to_dense(), ratio * ols.to_dense(),
                       atol=1e-12)
    assert np.array_equal(aug.asset_block.support, ols.support)


def test_fps2_output_shape_and_support():
    rng = np.random.default_rng(17)
    vals = rng.standard_normal((200, 10)) + 0.1
    factors = rng.standard_normal((200, 2)) + 0.05
    sel = [1, 3]
    aug = fps2_weights(ReturnPanel(vals), factors, sel, RHO, ell=120)
    assert aug.factor_block.shape == (2,)
    assert set(aug.asset_block.support.tolist()) <= set(sel)
    assert aug.to_dense().shape == (12,)


def test_fps2_dimension_guards():
    rng = np.random.default_rng(18)
    vals = rng.standard_normal((50, 10))
    factors = rng.standard_normal((50, 2))
    with pytest.raises(RegimeError):
        fps2_weights(ReturnPanel(vals), factors, list(range(10)), RHO, ell=13)
    with pytest.raises(RegimeError):
        fps2_weights(ReturnPanel(vals), factors, [0], RHO, ell=60)


def test_sharpe_of_optimal_weight_is_sqrt_theta():
    rng = np.random.default_rng(19)
    model = _random_model(rng, 7)
    w = population_mvp_weight(model, RHO, "mvp")
    assert portfolio_sharpe(w, model) == pytest.approx(
        np.sqrt(model.theta()), abs=1e-10
    )


def test_sharpe_scale_invariance():
    rng = np.random.default_rng(20)
    model = _random_model(rng, 4)
    w = population_mvp_weight(model, RHO, "bj")
    scaled = WeightVector.from_dense(3.7 * w.to_dense(), RHO)
    assert portfolio_sharpe(scaled, model) == pytest.approx(
        portfolio_sharpe(w, model), rel=1e-12
    )


def test_sharpe_zero_weights_error():
    model = PopulationModel(mu=np.array([0.1, 0.2]), sigma=np.eye(2))
    with pytest.raises(UndefinedRatioError):
        portfolio_sharpe(WeightVector({}, 2, RHO), model)


def test_sharpe_from_moments_hand_case():
    mean = np.array([0.1, 0.0])
    cov = np.diag([0.04, 1.0])
    assert sharpe_from_moments(mean, cov, np.array([1.0, 0.0])) == pytest.approx(0.5)


def test_weights_serialize_round_trip():
    w = WeightVector({2: 0.5, 7: -0.25}, universe_size=10, target_return=RHO)
    payload = w.to_dict()
    assert payload["entries"] == {"2": 0.5, "7": -0.25}
    assert payload["universe_size"] == 10


def test_post_screen_determinism():
    rng = np.random.default_rng(21)
    vals = rng.standard_normal((90, 7)) + 0.15
    panel = ReturnPanel(vals)
    w1 = post_screen_ols_weights(panel, [0, 3], RHO)
    w2 = post_screen_ols_weights(panel, [0, 3], RHO)
    assert w1.entries == w2.entries
