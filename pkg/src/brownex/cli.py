import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Mapping, Optional

from .artifacts import RunArtifacts
from .btest import (
    RegularTestConfig,
    TestMode,
    batch_runner,
    sensitivity_sweep,
    sweep_frame,
    test_path,
)
from .config import RunConfig
from .errors import BrownexError
from .estimation import EstimationInputs, build_params
from .execmodel import (
    ExecutionParams,
    TradeGrid,
    ensemble_stats,
    read_trade_grid,
    scenario_frame,
    simulate_approach1,
    simulate_approach2,
)
from .marketdata import (
    PathKind,
    PathSeries,
    TapeFormat,
    build_trader_paths,
    load_tape,
    load_tape_set,
    read_path_csv,
    write_path_csv,
    write_path_json,
)

logger = logging.getLogger(__name__)

MODEL_KEYS = ("alpha_perm", "kappa_temp", "sigma_price", "sigma_inv",
              "terminal_penalty", "running_penalty", "q_target")


def _float_list(value: Any) -> List[float]:
    """'0.5,1,2' or a list from a config file -> [0.5, 1.0, 2.0]."""
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return [float(v) for v in value]


def _configure_logging(verbose: bool) -> None:
    debug = verbose or bool(os.getenv("BROWNEX_DEBUG"))
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _tape_format(opts: Mapping[str, Any]) -> TapeFormat:
    return TapeFormat.from_mapping(opts)


def _trader_paths(opts: Mapping[str, Any]) -> tuple:
    if not opts.get("tape") or not opts.get("trader"):
        raise ValueError("--tape and --trader are both required")
    records = load_tape(opts["tape"], _tape_format(opts))
    return build_trader_paths(
        records,
        opts["trader"],
        opts["wealth_convention"],
        symbol=opts.get("symbol"),
        q0=float(opts.get("q0") or 0.0),
        x0=float(opts.get("x0") or 0.0),
        session_length=float(opts["session_length"]),
    )


def _load_path(opts: Mapping[str, Any]) -> PathSeries:
    """The path a test runs on: a two-column CSV (--path) or a trader's path from a tape."""
    if opts.get("path"):
        return read_path_csv(opts["path"], opts["process"], float(opts["session_length"]),
                             initial=float(opts.get("q0") or 0.0))
    if opts.get("tape"):
        inventory, wealth = _trader_paths(opts)
        return inventory if PathKind(opts["process"]) is PathKind.INVENTORY else wealth
    raise ValueError("give --tape with --trader, or --path")


# ===================================================================
# Commands
# ===================================================================


def _cmd_test(opts: Mapping[str, Any], art: RunArtifacts, mode: TestMode) -> Dict[str, Any]:
    path = _load_path(opts)
    result = test_path(path, RegularTestConfig.from_mapping(opts), mode)
    art.json("test_result.json", result.to_dict())
    verdict = "Brownian component detected" if result.reject_null else "no Brownian component detected"
    print(f"{mode.value} test: z = {result.statistic:.4f}, p = {result.p_value:.4g} ({verdict})")
    if result.degenerate:
        print("Warning: zero quarticity; result reported as non-reject.")
    return {}


def _cmd_test_regular(opts, art):
    return _cmd_test(opts, art, TestMode.REGULAR)


def _cmd_test_async(opts, art):
    return _cmd_test(opts, art, TestMode.ASYNC)


def _cmd_sweep(opts: Mapping[str, Any], art: RunArtifacts) -> Dict[str, Any]:
    cfg = RegularTestConfig.from_mapping(opts)
    sigma_grid = _float_list(opts["sigma_grid"]) if opts.get("sigma_grid") else [cfg.sigma_prime]
    gamma_grid = _float_list(opts["gamma_grid"]) if opts.get("gamma_grid") else [cfg.gamma]
    points = sensitivity_sweep(_load_path(opts), sigma_grid, gamma_grid, cfg)
    art.csv("sweep.csv", sweep_frame(points)[["sigma_prime", "gamma", "p_value"]])
    print(f"Swept {len(sigma_grid)} sigma' x {len(gamma_grid)} gamma values.")
    return {}


def _cmd_batch(opts: Mapping[str, Any], art: RunArtifacts) -> Dict[str, Any]:
    if not opts.get("tapes") or not opts.get("traders"):
        raise ValueError("batch needs --tapes and --traders")
    fmt = _tape_format(opts)
    tapes, failure = {}, None
    for tape in sorted(opts["tapes"]):
        try:
            day = load_tape_set([tape], fmt)
            if day.keys() & tapes.keys():
                raise ValueError(f"Duplicate day key {next(iter(day))!r} in tape set")
        except (BrownexError, ValueError, KeyError, FileNotFoundError) as e:
            failure = e
            logger.error("stopping at %s: %s", tape, e)
            break
        tapes.update(day)
    if not tapes:
        raise failure or ValueError("no tapes loaded")

    symbols = opts.get("symbols") or sorted({r.symbol for records in tapes.values() for r in records})
    try:
        report = batch_runner(
            tapes,
            opts["traders"],
            symbols,
            RegularTestConfig.from_mapping(opts),
            opts["mode"],
            opts["process"],
            wealth_convention=opts["wealth_convention"],
            session_length=float(opts["session_length"]),
            min_rate=float(opts["min_rate"]),
            workers=int(opts["workers"]),
        )
    except (BrownexError, ValueError, KeyError, ArithmeticError):
        art.manifest(partial=True, extra={"days": sorted(tapes)})
        raise
    art.csv("batch.csv", report.percent.reset_index())
    art.csv("batch_counts.csv", report.counts_frame())
    counts = {
        "days": sorted(tapes),
        "included": int(report.included.values.sum()),
        "excluded": int(report.excluded.values.sum()),
        "degenerate": int(report.degenerate.values.sum()),
    }
    print(f"Batch over {len(tapes)} day(s): {counts['included']} cells tested, "
          f"{counts['excluded']} excluded.")
    if failure is not None:
        art.manifest(partial=True, extra=counts)
        raise failure
    return counts


def _cmd_estimate(opts: Mapping[str, Any], art: RunArtifacts) -> Dict[str, Any]:
    for key in ("tape", "trader", "symbol", "spread"):
        if opts.get(key) is None:
            raise ValueError(f"estimate needs --{key}")
    fmt = _tape_format(opts)
    records = load_tape(opts["tape"], fmt)
    history = None
    if opts.get("history"):
        history = {os.path.splitext(os.path.basename(p))[0]: load_tape(p, fmt) for p in opts["history"]}
    inputs = EstimationInputs.from_tape(
        records,
        opts["trader"],
        opts["symbol"],
        float(opts["spread"]),
        history=history,
        bin_seconds=float(opts["estimation_bin_seconds"]),
        session_length=float(opts["session_length"]),
        history_days=int(opts["history_days"]),
    )
    params = build_params(
        inputs,
        terminal_penalty=float(opts["terminal_penalty"]),
        running_penalty=float(opts["running_penalty"]),
        horizon=float(opts["session_length"]),
        q0=float(opts.get("q0") or 0.0),
        q_target=float(opts["q_target"]),
        per_sqrt_second=bool(opts["per_sqrt_second"]),
        history_days=int(opts["history_days"]),
    )
    body = params.to_dict()
    body["inputs"] = {
        "avg_bin_spread": inputs.avg_bin_spread,
        "avg_bin_volume": inputs.avg_bin_volume,
        "dt": inputs.dt,
        "history_days_used": len(inputs.intraday_stds),
        "per_sqrt_second": bool(opts["per_sqrt_second"]),
    }
    art.json("params.json", body)
    print(f"alpha = {params.alpha_perm:.3g}, kappa = {params.kappa_temp:.3g}, "
          f"sigma_S = {params.sigma_price:.4g}, sigma_Q = {params.sigma_inv:.6g}")
    return {}


def _simulation_params(opts: Mapping[str, Any], grid: TradeGrid) -> ExecutionParams:
    base: Dict[str, Any] = {}
    if opts.get("params"):
        with open(opts["params"], "r", encoding="utf-8") as f:
            base = json.load(f)
    for key in MODEL_KEYS:
        if opts.get(key) is not None:
            base[key] = opts[key]
    base["horizon"] = float(opts["session_length"])
    if opts.get("q0_from_terminal"):
        base["q0"] = -float(grid.actual_inventory[-1])
    elif opts.get("q0") is not None:
        base["q0"] = float(opts["q0"])
    return ExecutionParams.from_mapping(base)


def _cmd_simulate(opts: Mapping[str, Any], art: RunArtifacts) -> Dict[str, Any]:
    if opts.get("grid"):
        grid = read_trade_grid(opts["grid"])
    else:
        grid = TradeGrid.from_paths(*_trader_paths(opts))
    params = _simulation_params(opts, grid)
    if int(opts["approach"]) not in (1, 2):
        raise ValueError(f"--approach must be 1 or 2, got {opts['approach']}")
    simulate = simulate_approach1 if int(opts["approach"]) == 1 else simulate_approach2
    ensemble = simulate(grid, params, int(opts["n_sim"]), int(opts["seed"]), workers=int(opts["workers"]))
    lo, hi = _float_list(opts["band"])
    summary = ensemble_stats(ensemble, grid, lo, hi)

    art.csv("inventory_band.csv", summary.band_frame("inventory"))
    art.csv("wealth_band.csv", summary.band_frame("wealth"))
    k = int(opts["scenario_samples"])
    art.csv("inventory_scenarios.csv", scenario_frame(ensemble.inventory_paths, grid.times, k))
    art.csv("wealth_scenarios.csv", scenario_frame(ensemble.wealth_paths, grid.times, k))
    if ensemble.price_paths is not None:
        art.csv("price_scenarios.csv", scenario_frame(ensemble.price_paths, grid.times, k))
    art.csv("kde.csv", summary.kde_frame())
    art.json("summary.json", {
        "mean_terminal_wealth": summary.mean_terminal_wealth,
        "actual_terminal_wealth": float(grid.actual_wealth[-1]),
        "outperformance": summary.outperformance,
        "band": list(summary.band),
        "kde_degenerate": summary.kde_degenerate,
        "params": params.to_dict(),
        **summary.extra,
    })
    print(f"Approach {ensemble.approach}: mean terminal wealth {summary.mean_terminal_wealth:.2f}, "
          f"{summary.outperformance:.1f}% of scenarios beat the actual day.")
    return {}


def _cmd_paths(opts: Mapping[str, Any], art: RunArtifacts) -> Dict[str, Any]:
    inventory, wealth = _trader_paths(opts)
    for name, path in (("inventory", inventory), ("wealth", wealth)):
        write_path_csv(path, art.register(f"{name}.csv"))
        write_path_json(path, art.register(f"{name}.json"))
    art.csv("trade_grid.csv", TradeGrid.from_paths(inventory, wealth).to_frame())
    print(f"{opts['trader']}: {len(inventory)} observations.")
    return {}


_HANDLERS: Dict[str, Callable[[Mapping[str, Any], RunArtifacts], Dict[str, Any]]] = {
    "test-regular": _cmd_test_regular,
    "test-async": _cmd_test_async,
    "sweep": _cmd_sweep,
    "batch": _cmd_batch,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "paths": _cmd_paths,
}


def run(config: RunConfig) -> int:
    """
    Summary:
        Executes a resolved command and writes its artifacts plus manifest.json.

    Args:
        config: The resolved RunConfig.

    Returns:
        0 on success, 1 on any error (diagnostic on stderr).
    """
    art = RunArtifacts(config)
    try:
        extra = _HANDLERS[config.command](config.options, art)
    except (BrownexError, ValueError, KeyError, FileNotFoundError, ArithmeticError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    art.manifest(extra=extra)
    print(f"Wrote {len(art.outputs)} file(s) to {art.root}")
    return 0


# ===================================================================
# Parser
# ===================================================================


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML, JSON or TOML config file (or a manifest.json).")
    common.add_argument("--output-dir", type=str, help="Directory for the run's files (default: output/).")
    common.add_argument("--seed", type=int, help="Master random seed.")
    common.add_argument("--workers", type=int, help="Worker threads.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")

    tape = argparse.ArgumentParser(add_help=False)
    tape.add_argument("--tape", type=str, help="Trade tape CSV.")
    tape.add_argument("--trader", type=str, help="Broker identifier to follow.")
    tape.add_argument("--symbol", type=str, help="Restrict to one ticker.")
    tape.add_argument("--process", choices=["inventory", "wealth"], help="Path to test.")
    tape.add_argument("--wealth-convention", choices=["payment_sum", "cash_plus_mark"],
                      help="How wealth is reconstructed from fills.")
    tape.add_argument("--path", type=str, help="Two-column time,value CSV instead of a tape.")
    tape.add_argument("--session-length", type=float, help="Session length T in seconds.")
    tape.add_argument("--session-open", type=float, help="Session open in raw tape seconds.")
    tape.add_argument("--q0", type=float, help="Inventory before the first trade.")

    test = argparse.ArgumentParser(add_help=False)
    test.add_argument("--sigma-prime", type=float, help="Fictitious volatility sigma'.")
    test.add_argument("--gamma", type=float,
                      help="Truncation multiplier. The regular test rejects a true null well below "
                           "--alpha-level at the default 3; use about 8 when test size matters.")
    test.add_argument("--alpha-level", type=float, help="One-sided significance level.")
    test.add_argument("--eta-estimator", choices=["sample_variance", "bipower"],
                      help="Estimator of the long-term variance used for truncation.")
    test.add_argument("--eta", type=float, help="Fixed long-term variance (skips estimation).")
    test.add_argument("--bin-seconds", type=float, help="Regular grid spacing in seconds.")
    test.add_argument("--async-truncate", action="store_true", default=None,
                      help="Truncate increments in the asynchronous test.")

    parser = argparse.ArgumentParser(
        prog="brownex",
        description="Test trader paths for a Brownian component and compare them with optimal execution.",
        epilog="Use 'brownex <command> --help' for more information on a specific command.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, help="Available commands")

    subparsers.add_parser("test-regular", parents=[common, tape, test],
                          help="Truncated realized volatility test on a regular grid.")
    subparsers.add_parser("test-async", parents=[common, tape, test],
                          help="Power-variation test on trade times.")

    parser_sweep = subparsers.add_parser("sweep", parents=[common, tape, test],
                                         help="p-values over a sigma' x gamma grid.")
    parser_sweep.add_argument("--sigma-grid", type=str, help="Comma-separated sigma' values.")
    parser_sweep.add_argument("--gamma-grid", type=str, help="Comma-separated gamma values.")

    parser_batch = subparsers.add_parser("batch", parents=[common, test],
                                         help="Rejection percentages over traders x symbols x days.")
    parser_batch.add_argument("--tapes", nargs="+", help="One tape per day; the file stem is the day key.")
    parser_batch.add_argument("--traders", nargs="+", help="Broker identifiers (rows).")
    parser_batch.add_argument("--symbols", nargs="+", help="Tickers (columns); default all in the tapes.")
    parser_batch.add_argument("--mode", choices=["regular", "async"], help="Which test to run.")
    parser_batch.add_argument("--process", choices=["inventory", "wealth"], help="Path to test.")
    parser_batch.add_argument("--wealth-convention", choices=["payment_sum", "cash_plus_mark"])
    parser_batch.add_argument("--session-length", type=float, help="Session length T in seconds.")
    parser_batch.add_argument("--session-open", type=float, help="Session open in raw tape seconds.")
    parser_batch.add_argument("--min-rate", type=float, help="Minimum trades per minute for a day to count.")

    parser_est = subparsers.add_parser("estimate", parents=[common, tape],
                                       help="Estimate model parameters from a tape.")
    parser_est.add_argument("--spread", type=float, help="Average bid-ask spread per bin.")
    parser_est.add_argument("--history", nargs="+", help="Prior-day tapes for the price volatility.")
    parser_est.add_argument("--per-sqrt-second", action="store_true", default=None,
                            help="Express sigma_Q per sqrt(second).")
    parser_est.add_argument("--estimation-bin-seconds", type=float, help="Bin length for volume averages.")
    parser_est.add_argument("--history-days", type=int, help="Days of price history expected.")
    parser_est.add_argument("--terminal-penalty", type=float, help="A.")
    parser_est.add_argument("--running-penalty", type=float, help="phi.")
    parser_est.add_argument("--q-target", type=float, help="Terminal inventory target.")

    parser_sim = subparsers.add_parser("simulate", parents=[common, tape],
                                       help="Monte Carlo of the optimal strategy on a trade grid.")
    parser_sim.add_argument("--grid", type=str, help="Trade grid CSV (time,price,inventory,wealth).")
    parser_sim.add_argument("--params", type=str, help="params.json written by 'estimate'.")
    parser_sim.add_argument("--approach", type=int, choices=[1, 2], help="1: observed prices, 2: simulated prices.")
    parser_sim.add_argument("--nsim", "--n-sim", dest="n_sim", type=int, help="Number of scenarios.")
    parser_sim.add_argument("--band", nargs=2, type=float, metavar=("LO", "HI"), help="Percentile band.")
    parser_sim.add_argument("--scenario-samples", type=int, help="Scenario paths written out.")
    parser_sim.add_argument("--q0-from-terminal", action="store_true", default=None,
                            help="Start from minus the actual terminal inventory.")
    parser_sim.add_argument("--alpha", dest="alpha_perm", type=float, help="Permanent impact.")
    parser_sim.add_argument("--kappa", dest="kappa_temp", type=float, help="Temporary impact.")
    parser_sim.add_argument("--sigma-price", type=float, help="Price volatility.")
    parser_sim.add_argument("--sigma-inv", type=float, help="Inventory volatility.")
    parser_sim.add_argument("--terminal-penalty", type=float, help="A.")
    parser_sim.add_argument("--running-penalty", type=float, help="phi.")
    parser_sim.add_argument("--q-target", type=float, help="Terminal inventory target.")

    parser_paths = subparsers.add_parser("paths", parents=[common, tape],
                                         help="Export a trader's inventory and wealth paths.")
    parser_paths.add_argument("--x0", type=float, help="Wealth before the first trade.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    '''
    Summary:
        The main entry point for the brownex command-line interface.

    Returns:
        The exit status.
    '''
    args = _build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        config = RunConfig.build(args.command, args.config, flags)
    except (ValueError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
