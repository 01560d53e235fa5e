"""Model constants estimated from tape data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .data.data import (
    ESTIMATION_DEFAULTS,
    PERMANENT_COEFFICIENT,
    RUNNING_PENALTY,
    SESSION_LENGTH,
    TEMPORARY_COEFFICIENT,
    TERMINAL_PENALTY,
)
from .errors import EmptyInput, TooFewObservations, ZeroVolume
from .execmodel import ExecutionParams
from .marketdata import TradeRecord, build_trader_paths

logger = logging.getLogger(__name__)

BIN_SECONDS = float(ESTIMATION_DEFAULTS["bin_seconds"])
HISTORY_DAYS = int(ESTIMATION_DEFAULTS["history_days"])


@dataclass(frozen=True, eq=False)
class EstimationInputs:
    """
    Attributes:
        avg_bin_spread: Average bid-ask spread per bin (currency).
        avg_bin_volume: Average traded volume per bin (shares).
        dt: Bin length in seconds.
        intraday_stds: One price-increment standard deviation per history day.
        inventory_increments: The day's q_i - q_{i-1}.
        mean_interval: Mean time between the trader's trades, for per-second scaling.
    """

    avg_bin_spread: float
    avg_bin_volume: float
    dt: float
    intraday_stds: Tuple[float, ...] = ()
    inventory_increments: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_interval: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "intraday_stds", tuple(float(s) for s in self.intraday_stds))
        object.__setattr__(self, "inventory_increments",
                           np.asarray(self.inventory_increments, dtype=float).reshape(-1))
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.avg_bin_spread < 0:
            raise ValueError(f"avg_bin_spread must be >= 0, got {self.avg_bin_spread}")
        if self.avg_bin_volume < 0:
            raise ValueError(f"avg_bin_volume must be >= 0, got {self.avg_bin_volume}")

    @classmethod
    def from_tape(
        cls,
        records: Sequence[TradeRecord],
        trader: str,
        symbol: str,
        avg_bin_spread: float,
        *,
        history: Optional[Mapping[str, Sequence[TradeRecord]]] = None,
        bin_seconds: float = BIN_SECONDS,
        session_length: float = SESSION_LENGTH,
        history_days: int = HISTORY_DAYS,
    ) -> "EstimationInputs":
        """
        Summary:
            Gathers estimation inputs from one day's tape.

        Args:
            records: The day's tape.
            trader: Broker whose inventory increments are used.
            symbol: Ticker.
            avg_bin_spread: Average spread per bin; tapes carry no quotes.
            history: Prior days (day key -> records) for the price volatility;
                the last `history_days` keys in sorted order are used. Without
                it the day itself is the only history.
            bin_seconds: Bin length for the volume average.
            session_length: T in seconds.
            history_days: How many prior days to keep.

        Returns:
            The EstimationInputs.
        """
        n_bins = int(math.floor(round(session_length / bin_seconds, 9)))
        if n_bins < 1:
            raise ValueError(f"bin of {bin_seconds}s does not fit in a {session_length}s session")
        volume = sum(r.size for r in records if r.symbol == symbol)

        if history:
            days = sorted(history)[-history_days:]
            stds = tuple(daily_price_std(history[d], symbol) for d in days)
        else:
            stds = (daily_price_std(records, symbol),)

        inventory, _ = build_trader_paths(records, trader, symbol=symbol,
                                          session_length=session_length)
        increments = np.diff(np.concatenate([[inventory.initial], inventory.values]))
        mean_interval = float(np.diff(inventory.times).mean()) if len(inventory) > 1 else None
        return cls(
            avg_bin_spread=float(avg_bin_spread),
            avg_bin_volume=volume / n_bins,
            dt=float(bin_seconds),
            intraday_stds=stds,
            inventory_increments=increments,
            mean_interval=mean_interval,
        )


def estimate_impacts(inputs: EstimationInputs,
                     permanent_coefficient: float = PERMANENT_COEFFICIENT,
                     temporary_coefficient: float = TEMPORARY_COEFFICIENT) -> Tuple[float, float]:
    """(alpha, kappa) = coefficient * (spread / volume) / dt."""
    if inputs.avg_bin_volume <= 0:
        raise ZeroVolume("average bin volume is zero; impacts are undefined")
    ratio = inputs.avg_bin_spread / inputs.avg_bin_volume / inputs.dt
    return permanent_coefficient * ratio, temporary_coefficient * ratio


def daily_price_std(records: Sequence[TradeRecord], symbol: str) -> float:
    """Sample std of one day's consecutive trade-price changes."""
    prices = np.array([r.price for r in sorted((r for r in records if r.symbol == symbol),
                                               key=lambda r: r.timestamp)])
    if prices.size < 3:
        raise TooFewObservations(f"need >= 3 {symbol} trades for a price std, got {prices.size}")
    return float(np.std(np.diff(prices), ddof=1))


def estimate_price_vol(intraday_stds: Sequence[float], history_days: int = HISTORY_DAYS) -> float:
    """Mean of the per-day price standard deviations; warns on a short history."""
    stds = np.asarray(list(intraday_stds), dtype=float)
    if stds.size == 0:
        raise EmptyInput("no daily price standard deviations given")
    if stds.size < history_days:
        logger.warning("price volatility from %d day(s); %d expected", stds.size, history_days)
    return float(stds.mean())


def estimate_inventory_vol(increments: Sequence[float], per_sqrt_second: bool = False,
                           mean_interval: Optional[float] = None) -> float:
    """
    Sample standard deviation of inventory increments, in shares per trade.

    With per_sqrt_second the value is divided by sqrt(mean_interval) so it can
    play the role of a per-sqrt(second) volatility.
    """
    x = np.asarray(list(increments), dtype=float)
    if x.size < 2:
        raise TooFewObservations(f"need >= 2 increments, got {x.size}")
    sigma = float(np.std(x, ddof=1))
    if per_sqrt_second:
        if not mean_interval or mean_interval <= 0:
            raise ValueError("per_sqrt_second needs a positive mean_interval")
        sigma /= math.sqrt(mean_interval)
    return sigma


def build_params(
    inputs: EstimationInputs,
    *,
    terminal_penalty: float = TERMINAL_PENALTY,
    running_penalty: float = RUNNING_PENALTY,
    horizon: float = SESSION_LENGTH,
    q0: float = 0.0,
    q_target: float = 0.0,
    per_sqrt_second: bool = False,
    history_days: int = HISTORY_DAYS,
) -> ExecutionParams:
    """Runs every estimator and assembles ExecutionParams."""
    alpha, kappa = estimate_impacts(inputs)
    sigma_price = estimate_price_vol(inputs.intraday_stds, history_days)
    sigma_inv = estimate_inventory_vol(inputs.inventory_increments, per_sqrt_second,
                                       inputs.mean_interval)
    logger.debug("estimated alpha=%.4g kappa=%.4g sigma=%.4g sigma~=%.4g",
                 alpha, kappa, sigma_price, sigma_inv)
    return ExecutionParams(
        alpha_perm=alpha,
        kappa_temp=kappa,
        sigma_price=sigma_price,
        sigma_inv=sigma_inv,
        terminal_penalty=terminal_penalty,
        running_penalty=running_penalty,
        horizon=horizon,
        q0=q0,
        q_target=q_target,
    )
