"""Monte Carlo harness: synthetic return designs, method runners, metrics.

Four designs share one factor skeleton r_t = A x_t + u_t with
u_t = mu_u + B f_t + e_t: design 1 is idiosyncratic only, 2 adds weak
factors (sparse, nested loadings), 3 adds a pervasive factor block, 4 has
both. Means are normalized so the population (augmented) squared Sharpe
ratio is exactly one, which pins the scale of every reported Sharpe ratio.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .defactor import defactor
from .errors import ConfigError, EmptyScreenError, NoValidLambdaError, NumericalError
from .moments import sample_moments, spd_solve
from .panels import FactorPanel, ReturnPanel
from .portfolio import (
    AugmentedWeights,
    PopulationModel,
    SubpoolConfig,
    WeightVector,
    fps2_weights,
    maxser_weights,
    population_aug_weights,
    population_mvp_weight,
    post_screen_ols_weights,
    sharpe_from_moments,
)
from .screening import ScreenConfig, screen

METHODS = ("ps2", "fps2", "ps2_on_factored_data", "maxser", "oracle_fps2")


@dataclass
class DgpSpec:
    """Design parameters; defaults follow the simulation hyperparameter setup."""

    dgp: int
    n: int
    t: int
    r_a: int = 3
    r_b: int = 3
    sigma_e2: float = 2.0
    theta_x0: float = 0.01
    seed: int = 0
    rho_bar: float = 0.05

    def __post_init__(self):
        if self.dgp not in (1, 2, 3, 4):
            raise ConfigError(f"dgp must be 1..4, got {self.dgp}")
        if self.n < 4:
            raise ConfigError("need N >= 4")
        if self.t < 1:
            raise ConfigError("need T >= 1")
        if not 0.0 < self.theta_x0 < 1.0:
            raise ConfigError("theta_x0 must lie in (0, 1)")
        if self.sigma_e2 <= 0:
            raise ConfigError("sigma_e2 must be positive")

    @property
    def sparsity(self) -> int:
        """Number of assets carrying the sparse mean signal."""
        return int(math.floor(1.415 * math.sqrt(self.n)))

    @property
    def weak_supports(self) -> list[int]:
        """Support length of each weak-factor loading column (nested)."""
        return [int(math.floor(self.n ** ((6 - k) / 10) + 0.5))
                for k in range(1, self.r_b + 1)]

    @property
    def has_strong(self) -> bool:
        return self.dgp in (3, 4)

    @property
    def has_weak(self) -> bool:
        return self.dgp in (2, 4)


@dataclass
class DgpRealization:
    returns: ReturnPanel
    factors: FactorPanel | None
    true_support: np.ndarray
    true_weights: WeightVector | AugmentedWeights
    population: PopulationModel
    spec: DgpSpec


def _orthogonalize(mat: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt orthogonalization, keeping column scale.

    Columns retain their Gaussian norms (~sqrt(rows)), so the resulting
    loadings describe a component comparable to the idiosyncratic noise in
    per-asset variance; normalizing to unit columns would shrink the common
    component to irrelevance. Zero rows of the input stay zero.
    """
    q = np.array(mat, dtype=np.float64, copy=True)
    for j in range(q.shape[1]):
        for i in range(j):
            denom = q[:, i] @ q[:, i]
            q[:, j] -= (q[:, i] @ q[:, j]) / denom * q[:, i]
        if np.linalg.norm(q[:, j]) <= 1e-12:
            raise ConfigError("loading column collapsed during orthogonalization")
    return q


def make_dgp(spec: DgpSpec) -> DgpRealization:
    """Draw one realization: loadings, population model, data, and truth."""
    rng = np.random.default_rng(spec.seed)
    n, t = spec.n, spec.t
    s1 = spec.sparsity
    if s1 < 1 or s1 > n:
        raise ConfigError(f"sparsity {s1} incompatible with N={n}")

    loadings_a = None
    if spec.has_strong:
        loadings_a = _orthogonalize(rng.standard_normal((n, spec.r_a)))

    loadings_b = np.zeros((n, spec.r_b))
    if spec.has_weak:
        supports = spec.weak_supports
        if max(supports) > n:
            raise ConfigError("weak-factor support exceeds N")
        raw = np.zeros((n, spec.r_b))
        for k, nk in enumerate(supports):
            raw[:nk, k] = rng.standard_normal(nk)
        loadings_b = _orthogonalize(raw)

    sigma_u = loadings_b @ loadings_b.T + spec.sigma_e2 * np.eye(n)
    spike = np.concatenate([np.ones(s1), np.zeros(n - s1)])
    if spec.has_weak:
        mu_u0 = loadings_b @ np.ones(spec.r_b) + spike
    else:
        mu_u0 = spike
    theta0 = float(mu_u0 @ spd_solve(sigma_u, mu_u0))
    scale = theta0 ** -0.5
    if spec.has_strong:
        scale *= math.sqrt(1.0 - spec.theta_x0)
    mu_u = scale * mu_u0

    if spec.has_strong:
        mu_x = math.sqrt(spec.theta_x0 / spec.r_a) * np.ones(spec.r_a)
        mu = loadings_a @ mu_x + mu_u
        sigma = loadings_a @ loadings_a.T + sigma_u
        model = PopulationModel(mu=mu, sigma=sigma, loadings=loadings_a,
                                mu_x=mu_x, sigma_x=np.eye(spec.r_a),
                                mu_u=mu_u, sigma_u=sigma_u)
        truth = population_aug_weights(model, spec.rho_bar)
    else:
        model = PopulationModel(mu=mu_u, sigma=sigma_u)
        truth = population_mvp_weight(model, spec.rho_bar, variant="mvp")

    if spec.has_weak:
        support_size = max(spec.weak_supports[0], s1)
    else:
        support_size = s1

    factors = None
    x = None
    if spec.has_strong:
        x = mu_x + rng.standard_normal((t, spec.r_a))
        factors = FactorPanel(x)
    u = mu_u + np.zeros((t, n))
    if spec.has_weak:
        u += rng.standard_normal((t, spec.r_b)) @ loadings_b.T
    u += math.sqrt(spec.sigma_e2) * rng.standard_normal((t, n))
    returns = x @ loadings_a.T + u if spec.has_strong else u

    return DgpRealization(
        returns=ReturnPanel(returns),
        factors=factors,
        true_support=np.arange(support_size),
        true_weights=truth,
        population=model,
        spec=spec,
    )


def screening_metrics(selected, truth, s: int) -> dict:
    """Discovery count, false-discovery proportion, and recall."""
    if s < 1:
        raise ValueError("true support size must be >= 1")
    sel = set(int(j) for j in selected)
    tru = set(int(j) for j in truth)
    false_hits = len(sel - tru)
    return {
        "nonzeros": len(sel),
        "fdp": false_hits / max(len(sel), 1),
        "pwr": len(sel & tru) / s,
    }


def estimation_metrics(weights, realization: DgpRealization) -> dict:
    """Weight-vector squared error and the sample Sharpe on selected columns.

    The error compares dense vectors over the full universe (plus the
    factor block when the truth has one), zeros filled in. The Sharpe uses
    the realization's sample moments restricted to the selected (and
    factor) columns.
    """
    truth = realization.true_weights
    truth_dense = truth.to_dense()
    est_dense = weights.to_dense()
    width = max(truth_dense.size, est_dense.size)
    diff = np.zeros(width)
    diff[: truth_dense.size] = truth_dense
    padded = np.zeros(width)
    padded[: est_dense.size] = est_dense
    mse = float(np.sum((padded - diff) ** 2))

    if isinstance(weights, AugmentedWeights):
        cols = weights.asset_block.support
        data = realization.returns.values[:, cols]
        if weights.factor_block.size:
            data = np.hstack([data, realization.factors.values])
        wsel = np.concatenate([
            weights.asset_block.to_dense()[cols], weights.factor_block
        ])
    else:
        cols = weights.support
        data = realization.returns.values[:, cols]
        wsel = weights.to_dense()[cols]
    m = sample_moments(ReturnPanel(data))
    sr = sharpe_from_moments(m.mean, m.cov, wsel)
    return {"mse": mse, "sr": sr}


_METRIC_FIELDS = ("nonzeros", "fdp", "pwr", "mse", "sr")


@dataclass
class SimReport:
    """Per-replication metrics and their cross-replication aggregates."""

    spec: DgpSpec
    method: str
    base_seed: int
    per_rep: list[dict | None] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_valid(self) -> int:
        return sum(1 for rep in self.per_rep if rep is not None)

    def aggregates(self) -> dict:
        out = {"reps": len(self.per_rep), "valid": self.n_valid}
        valid = [rep for rep in self.per_rep if rep is not None]
        for name in _METRIC_FIELDS:
            vals = np.array([rep[name] for rep in valid], dtype=np.float64)
            if vals.size == 0:
                out[f"mean_{name}"] = None
                out[f"sd_{name}"] = None
            else:
                out[f"mean_{name}"] = float(vals.mean())
                out[f"sd_{name}"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "base_seed": self.base_seed,
            "spec": {
                "dgp": self.spec.dgp, "n": self.spec.n, "t": self.spec.t,
                "r_a": self.spec.r_a, "r_b": self.spec.r_b,
                "sigma_e2": self.spec.sigma_e2, "theta_x0": self.spec.theta_x0,
                "rho_bar": self.spec.rho_bar,
            },
            "aggregates": self.aggregates(),
            "failures": [{"rep": r, "error": msg} for r, msg in self.failures],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["rep", "valid", *_METRIC_FIELDS])
            for r, rep in enumerate(self.per_rep):
                if rep is None:
                    writer.writerow([r, 0, "", "", "", "", ""])
                else:
                    writer.writerow(
                        [r, 1] + [repr(float(rep[name])) for name in _METRIC_FIELDS]
                    )

    def format_table(self) -> str:
        agg = self.aggregates()
        label = f"dgp{self.spec.dgp} N={self.spec.n} T={self.spec.t} {self.method}"
        lines = [label, "-" * len(label)]
        rows = [
            ("Nonzeros", "nonzeros", True),
            ("FDR", "fdp", False),
            ("Power", "pwr", False),
            ("MSE", "mse", False),
            ("SR", "sr", False),
        ]
        for title, name, with_sd in rows:
            mean = agg[f"mean_{name}"]
            if mean is None:
                lines.append(f"{title:<10} n/a")
            elif with_sd:
                lines.append(f"{title:<10} {mean:8.2f} ({agg[f'sd_{name}']:.2f})")
            else:
                lines.append(f"{title:<10} {mean:8.2f}")
        lines.append(f"valid reps {agg['valid']}/{agg['reps']}")
        return "\n".join(lines)


def _empty_factors(t: int) -> np.ndarray:
    return np.empty((t, 0))


def _run_one(spec: DgpSpec, method: str, seed: int,
             screen_cfg: ScreenConfig) -> dict:
    realization = make_dgp(replace(spec, seed=seed))
    cfg = replace(screen_cfg, seed=seed)
    rho = spec.rho_bar

    if method in ("ps2", "ps2_on_factored_data"):
        sel = screen(realization.returns, cfg).selected
        weights = post_screen_ols_weights(realization.returns, sel, rho)
    elif method == "fps2":
        if realization.factors is None:
            raise ConfigError("fps2 needs a design with observable factors (dgp 3/4)")
        residuals, _ = defactor(realization.returns, realization.factors)
        sel = screen(residuals, cfg).selected
        weights = fps2_weights(realization.returns, realization.factors,
                               sel, rho, ell=spec.t)
    elif method == "oracle_fps2":
        sel = realization.true_support
        fac = (realization.factors.values if realization.factors is not None
               else _empty_factors(spec.t))
        weights = fps2_weights(realization.returns, fac, sel, rho, ell=spec.t)
    elif method == "maxser":
        weights = maxser_weights(realization.returns, rho,
                                 subpool=SubpoolConfig(seed=seed))
        sel = weights.support
    else:
        raise ConfigError(f"unknown method {method!r}")

    metrics = screening_metrics(sel, realization.true_support,
                                realization.true_support.size)
    metrics.update(estimation_metrics(weights, realization))
    return metrics


def run_experiment(spec: DgpSpec, method: str, reps: int, base_seed: int,
                   screen_cfg: ScreenConfig | None = None,
                   threads: int = 1) -> SimReport:
    """Run `reps` replications of one (design, method) cell.

    Replication r uses seed base_seed + r for data, screening, and
    sub-pooling, so results are independent of execution order and thread
    count. Estimator failures mark the replication invalid; aggregates run
    over the valid ones.
    """
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    if reps < 1:
        raise ValueError("need at least one replication")
    cfg = screen_cfg if screen_cfg is not None else ScreenConfig()
    report = SimReport(spec=spec, method=method, base_seed=base_seed)

    def job(r: int):
        try:
            return _run_one(spec, method, base_seed + r, cfg)
        except NumericalError as exc:
            return (r, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(reps)))
    else:
        results = [job(r) for r in range(reps)]

    for r, res in enumerate(results):
        if isinstance(res, tuple):
            report.per_rep.append(None)
            report.failures.append(res)
        else:
            report.per_rep.append(res)
    return report


def strong_factor_demo(c: float, n: int, t: int, seed: int = 0) -> float:
    """Fraction of assets selected under a pervasive single-factor design.

    Returns are N(a + mu_u, aa' + I) with a = (c/sqrt(N)) 1 and a dense
    screening target, so ideally the whole universe is discovered; strong
    signals (large c) collapse the selection instead.
    """
    if c <= 0:
        raise ValueError("signal strength c must be positive")
    rng = np.random.default_rng(seed)
    a = (c / math.sqrt(n)) * np.ones(n)
    mu_u = 0.1 * np.ones(n)
    f = rng.standard_normal(t)
    e = rng.standard_normal((t, n))
    returns = np.outer(1.0 + f, a) + mu_u + e
    cfg = ScreenConfig(alpha=1.0, tau=math.sqrt(0.1), seed=seed)
    try:
        result = screen(ReturnPanel(returns), cfg)
    except (EmptyScreenError, NoValidLambdaError):
        return 0.0
    return result.selected.size / n
