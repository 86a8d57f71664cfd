"""Command-line front-end: simulate, screen, backtest, demo.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. Every subcommand is deterministic given its flags and input
files; numeric flags are echoed in the JSON report header. An optional
key=value config file supplies defaults; explicit flags win. Worker count
comes from --threads, falling back to the PSPS_THREADS environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import pandas as pd

from .backtest import (
    BacktestConfig,
    CleaningRules,
    UniverseCalendar,
    clean_panel,
    load_universe_calendar,
    rolling_backtest,
    weekly_target_return,
)
from .errors import ConfigError, DataError, NumericalError
from .panels import load_return_panel
from .screening import ScreenConfig, screen
from .simulate import DgpSpec, run_experiment, strong_factor_demo


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_screen_flags(sub, alpha_default=0.05, tau_default=1e-4):
    sub.add_argument("--alpha", type=float, default=None,
                     help=f"response level (default {alpha_default})")
    sub.add_argument("--tau", type=float, default=None,
                     help=f"response perturbation sd (default {tau_default})")
    sub.add_argument("--folds", type=int, default=None, help="CV folds (default 10)")
    sub.add_argument("--grid-size", type=int, default=None,
                     help="penalty grid size (default 100)")
    sub.add_argument("--grid-ratio", type=float, default=None,
                     help="grid lower endpoint ratio (default 1e-3)")
    sub.add_argument("--screen-method", choices=["lasso", "adaptive"], default=None,
                     help="screening variant (default lasso)")


def build_parser() -> _Parser:
    parser = _Parser(prog="psps", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None,
                        help="key = value file supplying flag defaults")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: PSPS_THREADS or 1)")
    subs = parser.add_subparsers(dest="subcommand")

    sim = subs.add_parser("simulate", help="run a Monte Carlo experiment cell")
    sim.add_argument("--dgp", type=int, choices=[1, 2, 3, 4], required=True)
    sim.add_argument("--n", type=int, required=True, help="number of assets")
    sim.add_argument("--t", type=int, required=True, help="number of periods")
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--method", default="ps2",
                     choices=["ps2", "fps2", "ps2_on_factored_data", "maxser",
                              "oracle_fps2"])
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--rho-bar", type=float, default=0.05)
    sim.add_argument("--out", required=True, help="output base path (.json/.csv)")
    _add_screen_flags(sim)

    scr = subs.add_parser("screen", help="screen a return panel CSV")
    scr.add_argument("--returns", required=True, help="return panel CSV")
    scr.add_argument("--seed", type=int, default=0)
    scr.add_argument("--out", required=True, help="output JSON path")
    _add_screen_flags(scr)

    bt = subs.add_parser("backtest", help="rolling backtest over price data")
    bt.add_argument("--prices", required=True, help="adjusted close CSV")
    bt.add_argument("--factors", required=True, help="factor return CSV")
    bt.add_argument("--rf", default=None, help="risk-free CSV (date,rate); default 0")
    bt.add_argument("--constituents", default=None,
                    help="membership CSV (date,tickers); default: all tickers")
    bt.add_argument("--window", type=int, required=True, help="screening window J")
    bt.add_argument("--cost-bps", type=float, default=10.0,
                    help="proportional cost in basis points (default 10)")
    bt.add_argument("--method", default="fps2",
                    choices=["fps2", "ps2", "ew", "factor_only", "maxser_f"])
    bt.add_argument("--ell", type=int, default=None,
                    help="fixed estimation window (default 50 + selected)")
    bt.add_argument("--annual-target", type=float, default=0.10,
                    help="annual return target (default 0.10)")
    bt.add_argument("--rho-bar", type=float, default=None,
                    help="per-period target; overrides --annual-target")
    bt.add_argument("--seed", type=int, default=0)
    bt.add_argument("--split-date", default=None,
                    help="subperiod boundary for pre/post reporting")
    bt.add_argument("--out", required=True, help="output base path (.json/.csv)")
    _add_screen_flags(bt, alpha_default="rho_bar", tau_default=1e-10)

    demo = subs.add_parser("demo", help="built-in demonstrations")
    demo_subs = demo.add_subparsers(dest="demo_name")
    sf = demo_subs.add_parser("strong-factor",
                              help="selection collapse under a pervasive factor")
    sf.add_argument("--c", type=float, required=True, help="signal strength")
    sf.add_argument("--n", type=int, default=500)
    sf.add_argument("--t", type=int, default=1500)
    sf.add_argument("--seed", type=int, default=0)
    sf.add_argument("--out", default=None, help="optional JSON output path")
    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> list[str]:
    """Prepend config-file values as flags so explicit flags override them."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise _UsageError("--config needs a file path")
    path = argv[idx + 1]
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    extra = []
    with open(path) as handle:
        for line in handle:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"config line without '=': {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            extra.extend([f"--{key.replace('_', '-')}", value])
    # insert defaults right after the subcommand token
    sub_positions = [i for i, tok in enumerate(argv)
                     if tok in ("simulate", "screen", "backtest", "demo",
                                "strong-factor")]
    insert_at = sub_positions[-1] + 1 if sub_positions else len(argv)
    return argv[:insert_at] + extra + argv[insert_at:]


def _screen_config(args, alpha_default: float, tau_default: float) -> ScreenConfig:
    return ScreenConfig(
        alpha=args.alpha if args.alpha is not None else alpha_default,
        tau=args.tau if args.tau is not None else tau_default,
        seed=args.seed,
        grid_size=args.grid_size if args.grid_size is not None else 100,
        grid_ratio=args.grid_ratio if args.grid_ratio is not None else 1e-3,
        folds=args.folds if args.folds is not None else 10,
        method=args.screen_method if args.screen_method is not None else "lasso",
    )


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("PSPS_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"PSPS_THREADS is not an integer: {env!r}") from exc
    return 1


def _write_json(path, payload) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _cmd_simulate(args) -> int:
    cfg = _screen_config(args, alpha_default=0.05, tau_default=1e-4)
    spec = DgpSpec(dgp=args.dgp, n=args.n, t=args.t, rho_bar=args.rho_bar,
                   seed=args.seed)
    report = run_experiment(spec, args.method, reps=args.reps,
                            base_seed=args.seed, screen_cfg=cfg,
                            threads=_threads(args))
    payload = report.to_dict()
    payload["config"] = {
        "dgp": args.dgp, "n": args.n, "t": args.t, "reps": args.reps,
        "method": args.method, "seed": args.seed, "rho_bar": args.rho_bar,
        "alpha": cfg.alpha, "tau": cfg.tau, "folds": cfg.folds,
        "grid_size": cfg.grid_size, "grid_ratio": cfg.grid_ratio,
        "screen_method": cfg.method,
    }
    _write_json(f"{args.out}.json", payload)
    report.write_csv(f"{args.out}.csv")
    print(report.format_table())
    return 0


def _cmd_screen(args) -> int:
    if not os.path.exists(args.returns):
        raise DataError(f"returns file not found: {args.returns}")
    panel = load_return_panel(args.returns)
    cfg = _screen_config(args, alpha_default=0.05, tau_default=1e-4)
    result = screen(panel, cfg)
    payload = result.to_dict()
    payload["config"] = {
        "returns": args.returns, "alpha": cfg.alpha, "tau": cfg.tau,
        "folds": cfg.folds, "seed": cfg.seed, "grid_size": cfg.grid_size,
        "grid_ratio": cfg.grid_ratio, "screen_method": cfg.method,
    }
    if panel.tickers is not None:
        payload["selected_tickers"] = [panel.tickers[j] for j in result.selected]
    _write_json(args.out, payload)
    print(f"selected {result.selected.size} assets at lambda* = "
          f"{result.lambda_star:.6g}")
    return 0


def _cmd_backtest(args) -> int:
    for label, path in (("prices", args.prices), ("factors", args.factors)):
        if not os.path.exists(path):
            raise DataError(f"{label} file not found: {path}")
    prices = pd.read_csv(args.prices, index_col=0)
    returns, cleaning = clean_panel(prices, CleaningRules())
    factors = pd.read_csv(args.factors, index_col=0)
    factors = factors.loc[factors.index.isin(returns.index)]
    factors = factors.reindex(returns.index)
    if factors.isna().any().any():
        raise DataError("factor panel does not cover every return date")
    if args.rf is not None:
        if not os.path.exists(args.rf):
            raise DataError(f"rf file not found: {args.rf}")
        rf_frame = pd.read_csv(args.rf, index_col=0)
        rf = rf_frame.iloc[:, 0].reindex(returns.index)
        if rf.isna().any():
            raise DataError("risk-free series does not cover every return date")
    else:
        rf = pd.Series(0.0, index=returns.index)
    if args.constituents is not None:
        if not os.path.exists(args.constituents):
            raise DataError(f"constituents file not found: {args.constituents}")
        calendar = load_universe_calendar(args.constituents,
                                          panel_tickers=returns.columns)
    else:
        calendar = UniverseCalendar.constant(returns.columns)

    rho = args.rho_bar if args.rho_bar is not None else weekly_target_return(
        args.annual_target)
    scr = _screen_config(args, alpha_default=rho, tau_default=1e-10)
    cfg = BacktestConfig(
        window=args.window, rho_bar=rho, method=args.method,
        tau_c=args.cost_bps / 10_000.0, ell_fixed=args.ell, screen=scr,
        split_date=args.split_date,
    )
    report = rolling_backtest(returns, factors, rf, calendar, cfg)
    payload = report.to_dict()
    payload["config"].update({
        "cost_bps": args.cost_bps, "annual_target": args.annual_target,
        "grid_size": scr.grid_size, "grid_ratio": scr.grid_ratio,
        "screen_method": scr.method,
    })
    payload["cleaning"] = {
        "dropped": [{"ticker": t, "rule": r, "detail": d}
                    for t, r, d in cleaning.dropped],
        "masked_cells": cleaning.masked_cells,
    }
    _write_json(f"{args.out}.json", payload)
    report.write_csv(f"{args.out}.csv")
    print(f"gross SR {report.gross_sr:.4f} | net SR {report.net_sr:.4f} | "
          f"turnover {report.turnover:.4f} over {len(report.gross)} periods")
    return 0


def _cmd_demo(args) -> int:
    if args.demo_name != "strong-factor":
        raise _UsageError("demo requires a demonstration name (strong-factor)")
    fraction = strong_factor_demo(args.c, args.n, args.t, seed=args.seed)
    print(f"selected fraction {fraction:.4f} "
          f"(c={args.c}, N={args.n}, T={args.t}, seed={args.seed})")
    if args.out:
        _write_json(args.out, {
            "fraction": fraction,
            "config": {"c": args.c, "n": args.n, "t": args.t, "seed": args.seed},
        })
    return 0


def run_cli(argv: list[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_help()
        return 1
    try:
        argv = _apply_config_file(parser, list(argv))
        args = parser.parse_args(argv)
        if args.subcommand is None:
            parser.print_help()
            return 1
        handler = {
            "simulate": _cmd_simulate,
            "screen": _cmd_screen,
            "backtest": _cmd_backtest,
            "demo": _cmd_demo,
        }[args.subcommand]
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
