"""
Tests for a Brownian component in an inventory or wealth path.

The null hypothesis is "no Brownian part". A fictitious Brownian motion with
known variance rate c' = sigma'^2 is added to the observed increments; if the
path had no diffusive part of its own, the truncated realized volatility of the
augmented path estimates c'T and the standardised excess is asymptotically
N(0, 1). A one-sided test rejects when the excess is too large.

Two forms are implemented: `regular_test` on a regular grid obtained by
resampling, and `async_test` on the raw trade times using realized power
variations.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats

from .data.data import MIN_RATE, SESSION_LENGTH, TEST_DEFAULTS
from .errors import TooFewObservations, TraderNotFound
from .marketdata import (
    IncrementSeries,
    PathKind,
    PathSeries,
    TradeRecord,
    WealthConvention,
    activity_filter,
    async_increments,
    build_trader_paths,
    resample_regular,
)
from .seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


class EtaEstimator(str, Enum):
    SAMPLE_VARIANCE = "sample_variance"
    BIPOWER = "bipower"


class TestMode(str, Enum):
    __test__ = False

    REGULAR = "regular"
    ASYNC = "async"


@dataclass(frozen=True)
class RegularTestConfig:
    """
    Parameters shared by the regular and asynchronous tests.

    Attributes:
        sigma_prime: Fictitious volatility sigma' (path units per sqrt(second)).
        gamma: Truncation multiplier.
        alpha_level: One-sided significance level.
        eta_estimator: How the long-term variance rate eta is estimated.
        seed: Master seed of the fictitious draws.
        eta: Fixed eta; when set, estimate_eta is skipped.
        async_truncate: Truncate increments in the asynchronous test too.
        bin_seconds: Grid spacing used when a test starts from a PathSeries.
    """

    sigma_prime: float = float(TEST_DEFAULTS["sigma_prime"])
    gamma: float = float(TEST_DEFAULTS["gamma"])
    alpha_level: float = float(TEST_DEFAULTS["alpha_level"])
    eta_estimator: EtaEstimator = EtaEstimator(TEST_DEFAULTS["eta_estimator"])
    seed: int = int(TEST_DEFAULTS["seed"])
    eta: Optional[float] = None
    async_truncate: bool = bool(TEST_DEFAULTS.get("async_truncate", False))
    bin_seconds: float = float(TEST_DEFAULTS["bin_seconds"])

    def __post_init__(self):
        object.__setattr__(self, "eta_estimator", EtaEstimator(self.eta_estimator))
        if not self.sigma_prime > 0:
            raise ValueError(f"sigma_prime must be > 0, got {self.sigma_prime}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 < self.alpha_level < 1.0:
            raise ValueError(f"alpha_level must lie in (0, 1), got {self.alpha_level}")
        if self.eta is not None and not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not self.bin_seconds > 0:
            raise ValueError(f"bin_seconds must be > 0, got {self.bin_seconds}")
        if int(self.seed) < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def c_prime(self) -> float:
        return self.sigma_prime ** 2

    @classmethod
    def from_mapping(cls, options: Mapping[str, Any]) -> "RegularTestConfig":
        """Picks the config keys out of a resolved option mapping; other keys are ignored."""
        keys = ("sigma_prime", "gamma", "alpha_level", "eta_estimator", "seed", "eta",
                "async_truncate", "bin_seconds")
        return cls(**{k: options[k] for k in keys if options.get(k) is not None})


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test. `degenerate` marks a zero quarticity (never rejects)."""

    __test__ = False

    statistic: float
    threshold: float
    p_value: float
    reject_null: bool
    c_hat: float
    quarticity: float
    c_prime_T: float
    n_used: int
    kind: TestMode
    degenerate: bool = False
    eta: float = float("nan")
    u_n: float = float("inf")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["kind"] = TestMode(self.kind).value
        return out


@dataclass(frozen=True)
class SweepPoint:
    sigma_prime: float
    gamma: float
    p_value: float
    statistic: float
    reject_null: bool


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def normal_abs_moment(r: float) -> float:
    """m_r = E|N(0,1)|^r = 2^(r/2) Gamma((r+1)/2) / sqrt(pi)."""
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    if r == 2:
        return 1.0
    if r == 4:
        return 3.0
    return float(2.0 ** (r / 2.0) * special.gamma((r + 1.0) / 2.0) / math.sqrt(math.pi))


def z_alpha(alpha: float) -> float:
    """Upper one-sided standard normal quantile."""
    return float(stats.norm.isf(alpha))


def fictitious_augment(incs: IncrementSeries, sigma_prime: float,
                       rng: Optional[np.random.Generator] = None,
                       eps: Optional[np.ndarray] = None) -> IncrementSeries:
    """
    Summary:
        Adds sigma' * sqrt(interval) * eps_i to every increment.

    Args:
        incs: The observed increments.
        sigma_prime: Fictitious volatility.
        rng: Stream the eps_i are drawn from (ignored when eps is given).
        eps: Pre-drawn standard normals, one per increment.

    Returns:
        A new IncrementSeries with the same intervals.
    """
    if not sigma_prime >= 0:
        raise ValueError(f"sigma_prime must be >= 0, got {sigma_prime}")
    if eps is None:
        if rng is None:
            raise ValueError("fictitious_augment needs either rng or eps")
        eps = rng.standard_normal(len(incs))
    eps = np.asarray(eps, dtype=float)
    if eps.shape != incs.increments.shape:
        raise ValueError(f"need {len(incs)} draws, got {eps.size}")
    return incs.with_increments(
        incs.increments + sigma_prime * np.sqrt(incs.interval_lengths) * eps
    )


def truncation_level(gamma: float, eta: float, delta_n: float) -> float:
    """u_n = gamma * sqrt(eta) * sqrt(delta_n)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if not eta >= 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if not delta_n > 0:
        raise ValueError(f"delta_n must be > 0, got {delta_n}")
    return gamma * math.sqrt(eta) * math.sqrt(delta_n)


def estimate_eta(incs: IncrementSeries,
                 method: Union[EtaEstimator, str] = EtaEstimator.SAMPLE_VARIANCE) -> float:
    """
    Summary:
        Long-term variance rate per second of the series.

    Args:
        incs: At least two increments.
        method: SAMPLE_VARIANCE, sum of squares over time; or BIPOWER,
            (pi/2) * sum |d_i||d_{i+1}| over time, which ignores isolated jumps.

    Returns:
        eta >= 0.

    Raises:
        TooFewObservations: If fewer than two increments are given.
    """
    if len(incs) < 2:
        raise TooFewObservations(f"estimate_eta needs >= 2 increments, got {len(incs)}")
    elapsed = float(incs.interval_lengths.sum())
    x = incs.increments
    if EtaEstimator(method) is EtaEstimator.BIPOWER:
        total = (math.pi / 2.0) * float(np.sum(np.abs(x[1:]) * np.abs(x[:-1])))
    else:
        total = float(np.sum(x * x))
    return total / elapsed


def truncated_realized_volatility(incs: IncrementSeries, u_n: float) -> Tuple[float, int]:
    """Sum of squared increments with |increment| <= u_n, and how many were kept."""
    if not u_n >= 0:
        raise ValueError(f"u_n must be >= 0, got {u_n}")
    x = incs.increments
    keep = np.abs(x) <= u_n
    return float(np.sum(np.where(keep, np.abs(x) ** 2, 0.0))), int(keep.sum())


def truncated_quarticity(incs: IncrementSeries, u_n: float) -> float:
    if not u_n >= 0:
        raise ValueError(f"u_n must be >= 0, got {u_n}")
    x = incs.increments
    return float(np.sum(np.where(np.abs(x) <= u_n, x ** 4, 0.0)))


def power_variation(incs: IncrementSeries, p: float, q: float) -> float:
    """B(p, q) = sum of interval^(q + 1 - p/2) * |increment|^p."""
    if p < 0 or q < 0:
        raise ValueError(f"p and q must be >= 0, got p={p}, q={q}")
    weights = incs.interval_lengths ** (q + 1.0 - p / 2.0)
    return float(np.sum(weights * np.abs(incs.increments) ** p))


def _finish(kind: TestMode, excess: float, scale: float, cfg: RegularTestConfig, **fields) -> TestResult:
    threshold = z_alpha(cfg.alpha_level)
    if scale > 0:
        statistic = excess / scale
        degenerate = False
    else:
        statistic = float("-inf")
        degenerate = True
    p_value = float(stats.norm.sf(statistic))
    result = TestResult(
        statistic=float(statistic),
        threshold=threshold,
        p_value=p_value,
        reject_null=bool(statistic > threshold),
        kind=kind,
        degenerate=degenerate,
        **fields,
    )
    logger.debug("%s test: z=%.4f p=%.4g reject=%s", kind.value, result.statistic,
                 result.p_value, result.reject_null)
    if degenerate:
        logger.debug("%s test: zero quarticity, reported as non-reject", kind.value)
    return result


# ---------------------------------------------------------------------------
# Tests
# ---------------------------------------------------------------------------


def regular_test(incs: IncrementSeries, cfg: RegularTestConfig,
                 eps: Optional[np.ndarray] = None) -> TestResult:
    """
    Summary:
        Truncated realized volatility test on a regular grid.

        z = sqrt(3/2) * (C - c'T) / sqrt(B), rejecting when z > z_alpha, where C
        and B are the truncated realized volatility and quarticity of the
        augmented increments and T the time they span.

    Args:
        incs: Regular-grid increments (all intervals equal).
        cfg: Test configuration.
        eps: Fictitious standard normals; drawn from default_rng(cfg.seed) when omitted.

    Returns:
        The TestResult. A zero quarticity gives statistic -inf, p-value 1 and
        `degenerate=True`.
    """
    if len(incs) < 2:
        raise TooFewObservations(f"regular_test needs >= 2 increments, got {len(incs)}")
    lengths = incs.interval_lengths
    if not np.allclose(lengths, lengths[0], rtol=1e-9, atol=0.0):
        raise ValueError("regular_test needs equal interval lengths; use async_test")

    if eps is None:
        eps = make_rng(cfg.seed).standard_normal(len(incs))
    augmented = fictitious_augment(incs, cfg.sigma_prime, eps=eps)
    eta = cfg.eta if cfg.eta is not None else estimate_eta(augmented, cfg.eta_estimator)
    u_n = truncation_level(cfg.gamma, eta, float(lengths[0]))

    c_hat, n_used = truncated_realized_volatility(augmented, u_n)
    b_hat = truncated_quarticity(augmented, u_n)
    c_prime_T = cfg.c_prime * float(lengths.sum())
    return _finish(
        TestMode.REGULAR,
        math.sqrt(1.5) * (c_hat - c_prime_T),
        math.sqrt(b_hat),
        cfg,
        c_hat=c_hat,
        quarticity=b_hat,
        c_prime_T=c_prime_T,
        n_used=n_used,
        eta=float(eta),
        u_n=float(u_n),
    )


def async_test(incs: IncrementSeries, cfg: RegularTestConfig,
               eps: Optional[np.ndarray] = None) -> TestResult:
    """
    Summary:
        Power-variation test on asynchronous observation times.

        z = sqrt(m4) * (B(2,0) - m2 c'T) / sqrt((m4 - m2) * B(4,1)); reject when
        z > z_alpha, i.e. B(2,0) > m2 c'T + z_alpha sqrt(1 - m2/m4) sqrt(B(4,1)).

    Args:
        incs: Increments between trades, irregular intervals allowed.
        cfg: Test configuration; `async_truncate` drops increments above
            gamma * sqrt(eta * interval).
        eps: Fictitious standard normals; drawn from default_rng(cfg.seed) when omitted.

    Returns:
        The TestResult.
    """
    if len(incs) < 2:
        raise TooFewObservations(f"async_test needs >= 2 increments, got {len(incs)}")
    if eps is None:
        eps = make_rng(cfg.seed).standard_normal(len(incs))
    augmented = fictitious_augment(incs, cfg.sigma_prime, eps=eps)

    eta = float("nan")
    used = augmented
    if cfg.async_truncate:
        eta = cfg.eta if cfg.eta is not None else estimate_eta(augmented, cfg.eta_estimator)
        bound = cfg.gamma * np.sqrt(eta * augmented.interval_lengths)
        keep = np.abs(augmented.increments) <= bound
        used = IncrementSeries(augmented.interval_lengths[keep], augmented.increments[keep],
                               augmented.horizon)

    m2, m4 = normal_abs_moment(2), normal_abs_moment(4)
    b20 = power_variation(used, 2, 0)
    b41 = power_variation(used, 4, 1)
    c_prime_T = cfg.c_prime * float(augmented.interval_lengths.sum())
    return _finish(
        TestMode.ASYNC,
        math.sqrt(m4) * (b20 - m2 * c_prime_T),
        math.sqrt((m4 - m2) * b41),
        cfg,
        c_hat=b20,
        quarticity=b41,
        c_prime_T=c_prime_T,
        n_used=len(used),
        eta=float(eta),
    )


def test_path(path: PathSeries, cfg: RegularTestConfig,
              mode: Union[TestMode, str] = TestMode.REGULAR) -> TestResult:
    """PathSeries -> increments (resampled or per trade) -> test."""
    if TestMode(mode) is TestMode.REGULAR:
        return regular_test(resample_regular(path, cfg.bin_seconds), cfg)
    return async_test(async_increments(path), cfg)


test_path.__test__ = False


def sensitivity_sweep(source: Union[PathSeries, IncrementSeries], sigma_grid: Sequence[float],
                      gamma_grid: Sequence[float], cfg: RegularTestConfig) -> List[SweepPoint]:
    """
    Summary:
        Runs regular_test over a sigma' x gamma grid.

        One set of fictitious draws (from cfg.seed) is rescaled for every sigma',
        so the p-value curves are smooth in sigma' and a one-point sweep equals
        a direct regular_test.

    Args:
        source: A PathSeries (resampled with cfg.bin_seconds) or regular increments.
        sigma_grid: sigma' values.
        gamma_grid: gamma values.
        cfg: Base configuration.

    Returns:
        One SweepPoint per grid point, sigma' major.
    """
    if not len(sigma_grid) or not len(gamma_grid):
        raise ValueError("sensitivity_sweep needs non-empty sigma and gamma grids")
    incs = resample_regular(source, cfg.bin_seconds) if isinstance(source, PathSeries) else source
    eps = make_rng(cfg.seed).standard_normal(len(incs))

    points: List[SweepPoint] = []
    for sigma_prime in sigma_grid:
        for gamma in gamma_grid:
            res = regular_test(incs, replace(cfg, sigma_prime=float(sigma_prime), gamma=float(gamma)), eps=eps)
            points.append(SweepPoint(float(sigma_prime), float(gamma), res.p_value,
                                     res.statistic, res.reject_null))
    return points


def sweep_frame(points: Sequence[SweepPoint]) -> pd.DataFrame:
    return pd.DataFrame([asdict(p) for p in points],
                        columns=["sigma_prime", "gamma", "p_value", "statistic", "reject_null"])


# ---------------------------------------------------------------------------
# Batch
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BatchReport:
    """
    Rejection percentages over traders x symbols, with the counts behind them.

    `percent` is NaN where no day was included.
    """

    percent: pd.DataFrame
    included: pd.DataFrame
    excluded: pd.DataFrame
    rejected: pd.DataFrame
    degenerate: pd.DataFrame

    def counts_frame(self) -> pd.DataFrame:
        """Long format: one row per (trader, symbol)."""
        rows = [
            {
                "trader": trader,
                "symbol": symbol,
                "included": int(self.included.loc[trader, symbol]),
                "excluded": int(self.excluded.loc[trader, symbol]),
                "rejected": int(self.rejected.loc[trader, symbol]),
                "degenerate": int(self.degenerate.loc[trader, symbol]),
                "percent": float(self.percent.loc[trader, symbol]),
            }
            for trader in self.percent.index
            for symbol in self.percent.columns
        ]
        return pd.DataFrame(rows, columns=["trader", "symbol", "included", "excluded",
                                           "rejected", "degenerate", "percent"])


@dataclass(frozen=True)
class _CellOutcome:
    status: str  # included | excluded
    reject: bool = False
    degenerate: bool = False


def _run_cell(records: Sequence[TradeRecord], trader: str, symbol: str, day: str,
              cfg: RegularTestConfig, mode: TestMode, process: PathKind,
              wealth_convention: WealthConvention, session_length: float,
              min_rate: float) -> _CellOutcome:
    try:
        inventory, wealth = build_trader_paths(records, trader, wealth_convention,
                                               symbol=symbol, session_length=session_length)
    except TraderNotFound:
        return _CellOutcome("excluded")
    except ValueError as e:
        # e.g. a closing print stamped after session_length
        logger.warning("excluding %s/%s on %s: %s", trader, symbol, day, e)
        return _CellOutcome("excluded")
    if not activity_filter(inventory, min_rate):
        return _CellOutcome("excluded")
    path = inventory if process is PathKind.INVENTORY else wealth
    cell_cfg = replace(cfg, seed=derive_seed(cfg.seed, trader, symbol, day))
    try:
        result = test_path(path, cell_cfg, mode)
    except TooFewObservations:
        return _CellOutcome("excluded")
    return _CellOutcome("included", result.reject_null, result.degenerate)


def batch_runner(
    tapes: Mapping[str, Sequence[TradeRecord]],
    traders: Sequence[str],
    symbols: Sequence[str],
    cfg: RegularTestConfig,
    mode: Union[TestMode, str] = TestMode.REGULAR,
    process: Union[PathKind, str] = PathKind.INVENTORY,
    *,
    wealth_convention: Union[WealthConvention, str] = WealthConvention.PAYMENT_SUM,
    session_length: float = SESSION_LENGTH,
    min_rate: float = MIN_RATE,
    workers: int = 1,
) -> BatchReport:
    """
    Summary:
        Percentage of active days on which the test rejects "no Brownian part",
        for every trader and symbol.

    Args:
        tapes: Day key -> tape records.
        traders: Broker identifiers (table rows).
        symbols: Tickers (table columns).
        cfg: Base configuration; each (trader, symbol, day) cell uses its own
            sub-seed derived from cfg.seed.
        mode: Regular-grid or asynchronous test.
        process: Test the inventory or the wealth path.
        wealth_convention: How wealth paths are reconstructed.
        session_length: T in seconds.
        min_rate: Activity threshold in trades per minute.
        workers: Threads evaluating cells; the report does not depend on it.

    Returns:
        A BatchReport. Days where the trader is absent or inactive are excluded.
    """
    mode = TestMode(mode)
    process = PathKind(process)
    convention = WealthConvention(wealth_convention)
    traders, symbols = list(traders), list(symbols)
    days = sorted(tapes)
    keys = [(t, s, d) for t in traders for s in symbols for d in days]

    def _cell(key: Tuple[str, str, str]) -> _CellOutcome:
        trader, symbol, day = key
        return _run_cell(tapes[day], trader, symbol, day, cfg, mode, process,
                         convention, session_length, min_rate)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            outcomes = list(pool.map(_cell, keys))
    else:
        outcomes = [_cell(k) for k in keys]

    def _table() -> pd.DataFrame:
        return pd.DataFrame(0, index=pd.Index(traders, name="trader"),
                            columns=pd.Index(symbols, name="symbol"), dtype=int)

    included, excluded, rejected, degenerate = _table(), _table(), _table(), _table()
    for (trader, symbol, _), out in zip(keys, outcomes):
        if out.status == "excluded":
            excluded.loc[trader, symbol] += 1
            continue
        included.loc[trader, symbol] += 1
        rejected.loc[trader, symbol] += int(out.reject)
        degenerate.loc[trader, symbol] += int(out.degenerate)

    percent = 100.0 * rejected / included.where(included > 0)
    logger.info("batch: %d cells, %d included, %d excluded",
                len(keys), int(included.values.sum()), int(excluded.values.sum()))
    return BatchReport(percent.astype(float), included, excluded, rejected, degenerate)
