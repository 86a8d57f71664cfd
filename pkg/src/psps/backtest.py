"""Rolling-window backtester: panel cleaning, time-varying universes,
one-step-ahead portfolio formation, and cost-aware evaluation.

Weights are formed at every date t in {J, ..., T} (1-based); the weight at
t-1 earns the realized return at t, and the weight formed at t prices the
rebalancing trade away from the cost-free drifted position. Evaluation
moments use the population divisor over the T-J evaluation periods.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .defactor import defactor
from .errors import (
    ConfigError,
    DataError,
    EmptyUniverseError,
    InsufficientDataError,
    NumericalError,
    UndefinedRatioError,
)
from .panels import FactorPanel, ReturnPanel
from .portfolio import (
    SubpoolConfig,
    fps2_weights,
    maxser_weights,
    plugin_weights,
    post_screen_ols_weights,
)
from .screening import ScreenConfig, screen

logger = logging.getLogger(__name__)

METHODS = ("fps2", "ps2", "ew", "factor_only", "maxser_f")


def weekly_target_return(annual: float, periods_per_year: int = 52) -> float:
    """Per-period target equivalent to an annual compound return."""
    return (1.0 + annual) ** (1.0 / periods_per_year) - 1.0


@dataclass
class CleaningRules:
    stale_len: int = 3          # constant-price spell marked missing
    gap_len: int = 5            # internal missing/zero run that drops a ticker
    max_missing_share: float = 0.10
    min_weeks: int = 104


@dataclass
class CleaningReport:
    dropped: list[tuple[str, str, str]] = field(default_factory=list)
    masked_cells: int = 0

    def add(self, ticker: str, rule: str, detail: str):
        self.dropped.append((ticker, rule, detail))


def _runs(mask: np.ndarray):
    """Yield (start, length) of each True run in a boolean vector."""
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            yield start, i - start
            start = None
    if start is not None:
        yield start, len(mask) - start


def clean_panel(prices: pd.DataFrame,
                rules: CleaningRules | None = None
                ) -> tuple[pd.DataFrame, CleaningReport]:
    """Log returns from adjusted closes, with the four exclusion rules.

    (i) drop tickers with no valid observations; (ii) mark returns inside
    constant-price spells of >= stale_len prices as missing; (iii) drop
    tickers with an internal missing/zero run of >= gap_len returns;
    (iv) drop tickers whose active span has > max_missing_share missing or
    zero cells, or is shorter than min_weeks.
    """
    rules = rules or CleaningRules()
    if prices.shape[0] < 2:
        raise DataError("price panel needs at least 2 dates")
    report = CleaningReport()
    returns = {}
    for ticker in prices.columns:
        px = prices[ticker].to_numpy(dtype=np.float64)
        valid = np.isfinite(px) & (px > 0)
        if not valid.any():
            report.add(str(ticker), "i", "no valid observations")
            continue
        ret = np.full(px.size - 1, np.nan)
        both = valid[1:] & valid[:-1]
        ret[both] = np.log(px[1:][both] / px[:-1][both])

        # rule (ii): constant-price spells of >= stale_len prices
        const = both & (px[1:] == px[:-1])
        for start, length in _runs(const):
            if length + 1 >= rules.stale_len:
                ret[start:start + length] = np.nan
                report.masked_cells += length

        obs = np.isfinite(ret)
        if not obs.any():
            report.add(str(ticker), "i", "no valid returns")
            continue
        first, last = np.flatnonzero(obs)[[0, -1]]
        span = ret[first:last + 1]

        # rule (iii): internal gaps (missing or zero spells)
        bad = ~np.isfinite(span) | (span == 0.0)
        gap = max((length for _, length in _runs(bad)), default=0)
        if gap >= rules.gap_len:
            report.add(str(ticker), "iii", f"internal gap of {gap} weeks")
            continue

        # rule (iv): missing/zero share and span length
        share = bad.mean()
        if share > rules.max_missing_share:
            report.add(str(ticker), "iv", f"missing/zero share {share:.1%}")
            continue
        if span.size < rules.min_weeks:
            report.add(str(ticker), "iv", f"history of {span.size} weeks")
            continue
        full = np.full(px.size - 1, np.nan)
        full[first:last + 1] = span
        returns[str(ticker)] = full

    if not returns:
        raise EmptyUniverseError("no tickers survive cleaning")
    out = pd.DataFrame(returns, index=prices.index[1:])
    return out, report


class UniverseCalendar:
    """Historical constituent membership, queried as-of a date."""

    def __init__(self, memberships: dict, panel_tickers=None):
        items = sorted(memberships.items(), key=lambda kv: str(kv[0]))
        self.dates = [k for k, _ in items]
        self.members = [frozenset(v) for _, v in items]
        if panel_tickers is not None:
            known = set(panel_tickers)
            for i, mem in enumerate(self.members):
                missing = mem - known
                if missing:
                    logger.warning(
                        "calendar %s: %d members missing from the panel",
                        self.dates[i], len(missing),
                    )
                self.members[i] = mem & known

    @classmethod
    def constant(cls, tickers) -> "UniverseCalendar":
        return cls({"": set(tickers)})

    def members_at(self, date) -> frozenset:
        """Latest membership row at or before `date`."""
        key = str(date)
        chosen = None
        for d, mem in zip(self.dates, self.members):
            if str(d) <= key:
                chosen = mem
            else:
                break
        if chosen is None:
            return frozenset()
        return chosen


def load_universe_calendar(path, panel_tickers=None) -> UniverseCalendar:
    """CSV with columns (date, comma-separated tickers)."""
    memberships = {}
    with open(path, newline="") as handle:
        for row in csv.reader(handle):
            if not row or row[0].strip().lower() == "date":
                continue
            date = row[0].strip()
            names = ",".join(row[1:])
            memberships[date] = {t.strip() for t in names.split(",") if t.strip()}
    if not memberships:
        raise DataError(f"{path}: no constituent rows found")
    return UniverseCalendar(memberships, panel_tickers=panel_tickers)


@dataclass
class BacktestConfig:
    window: int                       # screening window J
    rho_bar: float
    method: str = "fps2"
    tau_c: float = 0.001              # proportional cost (10 bps default)
    ell_fixed: int | None = None      # None -> 50 + |selected|
    screen: ScreenConfig = field(default_factory=lambda: ScreenConfig(tau=1e-10))
    split_date: str | None = None     # optional subperiod boundary
    maxser_subpool: int = 50

    def __post_init__(self):
        if self.window < 10:
            raise ConfigError("screening window must be >= 10")
        if not math.isfinite(self.rho_bar):
            raise ConfigError("target return must be finite")
        if self.tau_c < 0:
            raise ConfigError("transaction cost must be nonnegative")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")

    def ell(self, n_selected: int) -> int:
        if self.ell_fixed is not None:
            return self.ell_fixed
        return 50 + n_selected


@dataclass
class PerformanceSummary:
    gross_sr: float
    net_sr: float
    turnover: float
    gross: list[float]
    net: list[float]
    trades: list[float]


def evaluate_performance(weights: list[dict], asset_returns: list[dict],
                         rf: list[float], tau_c: float) -> PerformanceSummary:
    """Gross/net Sharpe and turnover from a weight history.

    weights has one more entry than asset_returns; period i earns
    weights[i] on asset_returns[i], then pays tau_c * (1 + gross) times the
    L1 distance between weights[i+1] and the drifted cost-free position
    w+_j = w_j (1 + r_j + rf) / (1 + gross + rf).
    """
    periods = len(asset_returns)
    if len(weights) != periods + 1:
        raise ValueError("need exactly one more weight vector than return periods")
    if len(rf) != periods:
        raise ValueError("risk-free series length mismatch")
    if periods < 2:
        raise InsufficientDataError("need at least 2 evaluation periods")
    gross_list, net_list, trades = [], [], []
    for i in range(periods):
        held = weights[i]
        rets = asset_returns[i]
        gross = sum(w * rets.get(j, 0.0) for j, w in held.items())
        denom = 1.0 + gross + rf[i]
        drifted = {
            j: w * (1.0 + rets.get(j, 0.0) + rf[i]) / denom
            for j, w in held.items()
        }
        target = weights[i + 1]
        trade = 0.0
        for j in set(drifted) | set(target):
            trade += abs(target.get(j, 0.0) - drifted.get(j, 0.0))
        net = gross - tau_c * (1.0 + gross) * trade
        gross_list.append(gross)
        net_list.append(net)
        trades.append(trade)

    def _sr(series):
        arr = np.asarray(series)
        sd = arr.std()  # population divisor over the evaluation periods
        if sd <= 0:
            raise UndefinedRatioError("realized returns have zero dispersion")
        return float(arr.mean() / sd)

    return PerformanceSummary(
        gross_sr=_sr(gross_list),
        net_sr=_sr(net_list),
        turnover=float(np.mean(trades)),
        gross=gross_list,
        net=net_list,
        trades=trades,
    )


@dataclass
class BacktestReport:
    dates: list
    gross: list[float]
    net: list[float]
    trades: list[float]
    gross_sr: float
    net_sr: float
    turnover: float
    weight_history: list[dict]
    fallbacks: list[tuple[str, str]]
    config_echo: dict
    subperiods: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config_echo,
            "gross_sr": self.gross_sr,
            "net_sr": self.net_sr,
            "turnover": self.turnover,
            "periods": len(self.gross),
            "subperiods": self.subperiods,
            "fallbacks": [{"date": str(d), "action": a} for d, a in self.fallbacks],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["date", "gross", "net", "turnover"])
            for d, g, n, tr in zip(self.dates, self.gross, self.net, self.trades):
                writer.writerow([d, repr(g), repr(n), repr(tr)])


def _window_universe(returns: pd.DataFrame, members, lo: int, hi: int) -> list[str]:
    """Members with a complete return history over rows [lo, hi)."""
    block = returns.iloc[lo:hi]
    ok = block.notna().all(axis=0)
    return [t for t in returns.columns if t in members and ok[t]]


def _form_weights(r_win: np.ndarray, x_win: np.ndarray, tickers: list[str],
                  factor_names: list[str], cfg: BacktestConfig,
                  seed: int) -> tuple[dict, str | None]:
    """Weights for one formation date as {position: weight}.

    Returns (weights, fallback_note). Screening failures degrade fps2 to
    factor_only and ps2 to ew rather than aborting the run.
    """
    scr_cfg = replace(cfg.screen, seed=seed)
    n = len(tickers)

    def _ew():
        return {t: 1.0 / n for t in tickers}

    def _factor_only():
        fac_panel = ReturnPanel(x_win)
        w = plugin_weights(fac_panel, list(range(x_win.shape[1])), cfg.rho_bar)
        dense = w.to_dense()
        return {name: float(dense[k]) for k, name in enumerate(factor_names)}

    if cfg.method == "ew":
        return _ew(), None
    if cfg.method == "factor_only":
        return _factor_only(), None

    panel = ReturnPanel(r_win)
    if cfg.method == "maxser_f":
        aug = np.hstack([r_win, x_win])
        names = tickers + factor_names
        sub = SubpoolConfig(size=cfg.maxser_subpool, seed=seed)
        w = maxser_weights(ReturnPanel(aug), cfg.rho_bar, subpool=sub)
        return {names[j]: w.entries[j] for j in w.support}, None

    try:
        sel = screen(panel if cfg.method == "ps2" else
                     defactor(panel, FactorPanel(x_win))[0], scr_cfg).selected
    except NumericalError as exc:
        note = f"screening failed ({type(exc).__name__})"
        if cfg.method == "fps2":
            return _factor_only(), note + "; used factor_only"
        return _ew(), note + "; used ew"

    ell = min(cfg.ell(sel.size), r_win.shape[0])
    try:
        if cfg.method == "fps2":
            aw = fps2_weights(panel, x_win, sel, cfg.rho_bar, ell)
            out = {tickers[j]: aw.asset_block.entries[j]
                   for j in aw.asset_block.support}
            for k, name in enumerate(factor_names):
                out[name] = float(aw.factor_block[k])
            return out, None
        w = post_screen_ols_weights(ReturnPanel(r_win[-ell:]), sel, cfg.rho_bar)
        return {tickers[j]: w.entries[j] for j in w.support}, None
    except NumericalError as exc:
        note = f"estimation failed ({type(exc).__name__})"
        if cfg.method == "fps2":
            return _factor_only(), note + "; used factor_only"
        return _ew(), note + "; used ew"


def rolling_backtest(returns: pd.DataFrame, factors: pd.DataFrame,
                     rf: pd.Series, calendar: UniverseCalendar,
                     cfg: BacktestConfig) -> BacktestReport:
    """One-step-ahead rolling evaluation over a cleaned return panel.

    At each formation date the investable universe is the constituents with
    a complete J-window history; factor returns enter every method's
    realized return through the augmented position vector.
    """
    t_total = len(returns)
    if cfg.window >= t_total:
        raise InsufficientDataError(
            f"window J={cfg.window} needs T > J, got T={t_total}"
        )
    if not returns.index.equals(factors.index):
        raise DataError("returns and factors must share the same date index")
    if not returns.index.equals(rf.index):
        raise DataError("returns and risk-free series must share the same date index")
    factor_names = [str(c) for c in factors.columns]
    overlap = set(factor_names) & {str(c) for c in returns.columns}
    if overlap:
        raise DataError(f"factor names collide with tickers: {sorted(overlap)}")

    weight_history = []
    fallbacks = []
    formation_dates = list(returns.index[cfg.window - 1:])
    for pos, date in enumerate(formation_dates):
        hi = cfg.window + pos          # exclusive end row of the window
        lo = hi - cfg.window
        members = calendar.members_at(date)
        tickers = _window_universe(returns, members, lo, hi)
        if not tickers:
            raise EmptyUniverseError(f"empty investable universe at {date}")
        r_win = returns[tickers].iloc[lo:hi].to_numpy()
        x_win = factors.iloc[lo:hi].to_numpy()
        weights, note = _form_weights(
            r_win, x_win, tickers, factor_names, cfg,
            seed=cfg.screen.seed + pos,
        )
        if note:
            fallbacks.append((date, note))
            logger.info("%s: %s", date, note)
        weight_history.append(weights)

    eval_dates = list(returns.index[cfg.window:])
    period_returns = []
    for date in eval_dates:
        row = returns.loc[date]
        rets = {t: float(row[t]) for t in returns.columns if np.isfinite(row[t])}
        frow = factors.loc[date]
        for name in factor_names:
            rets[name] = float(frow[name])
        period_returns.append(rets)
    rf_list = [float(rf.loc[d]) for d in eval_dates]

    perf = evaluate_performance(weight_history, period_returns, rf_list, cfg.tau_c)
    report = BacktestReport(
        dates=eval_dates,
        gross=perf.gross,
        net=perf.net,
        trades=perf.trades,
        gross_sr=perf.gross_sr,
        net_sr=perf.net_sr,
        turnover=perf.turnover,
        weight_history=weight_history,
        fallbacks=fallbacks,
        config_echo={
            "window": cfg.window,
            "rho_bar": cfg.rho_bar,
            "method": cfg.method,
            "tau_c": cfg.tau_c,
            "ell_fixed": cfg.ell_fixed,
            "alpha": cfg.screen.alpha,
            "tau": cfg.screen.tau,
            "folds": cfg.screen.folds,
            "seed": cfg.screen.seed,
        },
    )
    if cfg.split_date is not None:
        split = str(cfg.split_date)
        pre = [i for i, d in enumerate(eval_dates) if str(d) <= split]
        post = [i for i, d in enumerate(eval_dates) if str(d) > split]
        for label, idx in (("pre", pre), ("post", post)):
            if len(idx) >= 2:
                lo_i, hi_i = idx[0], idx[-1] + 1
                sub = evaluate_performance(
                    weight_history[lo_i:hi_i + 1],
                    period_returns[lo_i:hi_i],
                    rf_list[lo_i:hi_i],
                    cfg.tau_c,
                )
                report.subperiods[label] = {
                    "gross_sr": sub.gross_sr,
                    "net_sr": sub.net_sr,
                    "turnover": sub.turnover,
                    "periods": len(idx),
                }
    return report
