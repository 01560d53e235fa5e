"""
Trade tapes in, per-trader inventory and wealth paths out.

A tape is a CSV file with one line per transaction (time, symbol, price, size,
buyer broker, seller broker). Because both counterparties are reported, any
broker's inventory q_i and wealth x_i can be followed through the day at the
times tau_i of the trades it took part in. Those paths are what the Brownian
tests in `btest` and the execution comparison in `execmodel` consume.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Union

import numpy as np
import pandas as pd

from .data.data import MIN_RATE, SESSION_LENGTH, TAPE_COLUMNS, TAPE_DELIMITER
from .errors import (
    BinLargerThanSession,
    EmptyTape,
    MissingColumn,
    TooFewObservations,
    TraderNotFound,
    UnparsableRow,
)

logger = logging.getLogger(__name__)

TAPE_FIELDS = ("timestamp", "symbol", "price", "size", "buyer", "seller")


class PathKind(str, Enum):
    INVENTORY = "inventory"
    WEALTH = "wealth"


class WealthConvention(str, Enum):
    """How x_i is accumulated from the trader's fills."""

    PAYMENT_SUM = "payment_sum"
    CASH_PLUS_MARK = "cash_plus_mark"


@dataclass(frozen=True)
class TradeRecord:
    """One tape line.

    Attributes:
        timestamp: Seconds since session open.
        symbol: Ticker.
        price: Currency per share.
        size: Shares traded.
        buyer_id: Broker on the buy side.
        seller_id: Broker on the sell side.
    """

    timestamp: float
    symbol: str
    price: float
    size: int
    buyer_id: str
    seller_id: str

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if not self.price > 0:
            raise ValueError(f"price must be > 0, got {self.price}")
        if not self.size > 0:
            raise ValueError(f"size must be > 0, got {self.size}")
        if not self.buyer_id:
            raise ValueError("buyer_id must not be empty")
        if not self.seller_id:
            raise ValueError("seller_id must not be empty")


@dataclass(frozen=True)
class TapeFormat:
    """Column map and clock conventions of a tape file.

    Attributes:
        columns: Logical field name -> CSV header.
        delimiter: Field separator.
        session_open: Session open in raw tape seconds; None means the first
            timestamp of the tape is the session clock's zero.
        session_length: T in seconds.
    """

    columns: Dict[str, str] = field(default_factory=lambda: dict(TAPE_COLUMNS))
    delimiter: str = TAPE_DELIMITER
    session_open: Optional[float] = None
    session_length: float = SESSION_LENGTH

    def __post_init__(self):
        missing = [f for f in TAPE_FIELDS if f not in self.columns]
        if missing:
            raise ValueError(f"TapeFormat.columns is missing logical fields: {missing}")
        if not self.session_length > 0:
            raise ValueError(f"session_length must be > 0, got {self.session_length}")

    @classmethod
    def from_mapping(cls, options: Mapping[str, object]) -> "TapeFormat":
        """Builds a format from config keys (columns, delimiter, session_open, session_length)."""
        columns = dict(TAPE_COLUMNS)
        columns.update(dict(options.get("columns") or {}))
        session_open = options.get("session_open")
        return cls(
            columns=columns,
            delimiter=str(options.get("delimiter") or TAPE_DELIMITER),
            session_open=None if session_open is None else float(session_open),
            session_length=float(options.get("session_length") or SESSION_LENGTH),
        )


@dataclass(frozen=True, eq=False)
class PathSeries:
    """Asynchronous observations of a trader's inventory or wealth for one day.

    Attributes:
        times: Strictly increasing observation times (seconds since open).
        values: Observed values, one per time.
        kind: Inventory or wealth.
        session_length: T in seconds.
        initial: Value before the first observation (q0 or x0).
        marks: Optional trade price s_i at each observation.
    """

    times: np.ndarray
    values: np.ndarray
    kind: PathKind
    session_length: float
    initial: float = 0.0
    marks: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", PathKind(self.kind))
        if self.marks is not None:
            marks = np.asarray(self.marks, dtype=float).reshape(-1)
            if marks.shape != times.shape:
                raise ValueError("marks must have the same length as times")
            object.__setattr__(self, "marks", marks)

        if times.shape != values.shape:
            raise ValueError(f"len(times)={times.size} != len(values)={values.size}")
        if not self.session_length > 0:
            raise ValueError(f"session_length must be > 0, got {self.session_length}")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValueError("times must be strictly increasing")
            if times[0] < 0 or times[-1] > self.session_length:
                raise ValueError(
                    f"times must lie in [0, {self.session_length}], got [{times[0]}, {times[-1]}]"
                )

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True, eq=False)
class IncrementSeries:
    """Increments of a path together with the interval each one spans."""

    interval_lengths: np.ndarray
    increments: np.ndarray
    horizon: float

    def __post_init__(self):
        lengths = np.asarray(self.interval_lengths, dtype=float).reshape(-1)
        incs = np.asarray(self.increments, dtype=float).reshape(-1)
        object.__setattr__(self, "interval_lengths", lengths)
        object.__setattr__(self, "increments", incs)
        if lengths.shape != incs.shape:
            raise ValueError(
                f"len(interval_lengths)={lengths.size} != len(increments)={incs.size}"
            )
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if lengths.size:
            if np.any(lengths <= 0):
                raise ValueError("interval lengths must be positive")
            slack = float(lengths.max()) * (1 + 1e-9)
            if float(lengths.sum()) > self.horizon + slack:
                raise ValueError("interval lengths exceed the horizon by more than one interval")

    def __len__(self) -> int:
        return int(self.increments.size)

    def with_increments(self, increments: np.ndarray) -> "IncrementSeries":
        """Same intervals and horizon, new increments."""
        return replace(self, increments=np.asarray(increments, dtype=float))


# ---------------------------------------------------------------------------
# Tape parsing
# ---------------------------------------------------------------------------


def _clock_seconds(raw: pd.Series) -> pd.Series:
    """Numeric seconds, or HH:MM:SS[.f] clock strings converted to seconds."""
    seconds = pd.to_numeric(raw, errors="coerce")
    clock = seconds.isna() & raw.str.contains(":", regex=False)
    if clock.any():
        parsed = pd.to_timedelta(raw[clock], errors="coerce").dt.total_seconds()
        seconds = seconds.astype(float)
        seconds[clock] = parsed
    return seconds.astype(float)


def parse_tape(stream: Union[BinaryIO, TextIO, str, Path], fmt: Optional[TapeFormat] = None) -> List[TradeRecord]:
    """
    Summary:
        Parses a CSV trade tape into TradeRecords sorted by session time.

    Args:
        stream: A binary/text stream or a file path holding UTF-8 CSV with a header row.
        fmt: Column map and clock conventions. Defaults to defaults.yaml.

    Returns:
        The records, sorted ascending by timestamp (stable for ties).

    Raises:
        EmptyTape: If the tape has no header or no data rows.
        MissingColumn: If a configured column is absent from the header.
        UnparsableRow: For rows violating TradeRecord's invariants; `line` is the
            first offending 1-based file line, `lines` all of them.
    """
    fmt = fmt or TapeFormat()
    try:
        df = pd.read_csv(
            stream,
            dtype=str,
            sep=fmt.delimiter,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as e:
        raise EmptyTape("Tape is empty (no header row)") from e
    except pd.errors.ParserError as e:
        # The tokenizer stops at the first row wider than the header.
        found = re.search(r"line (\d+), saw (\d+)", str(e))
        if found is None:
            raise UnparsableRow(0, f"unreadable CSV: {e}") from e
        line, width = int(found.group(1)), int(found.group(2))
        raise UnparsableRow(line, f"{width} fields, more than the header") from e

    df.columns = [str(c).strip() for c in df.columns]
    for logical in TAPE_FIELDS:
        header = fmt.columns[logical]
        if header not in df.columns:
            raise MissingColumn(header, list(df.columns))

    # Line numbers: header is line 1, data row k is line k + 2.
    df = df[[fmt.columns[f] for f in TAPE_FIELDS]]
    df.columns = list(TAPE_FIELDS)
    df = df.apply(lambda col: col.str.strip())
    blank = (df == "").all(axis=1)
    lines = pd.Series(np.arange(len(df)) + 2, index=df.index)
    df, lines = df[~blank], lines[~blank]
    if df.empty:
        raise EmptyTape("Tape has a header but no trades")

    raw_time = _clock_seconds(df["timestamp"])
    price = pd.to_numeric(df["price"], errors="coerce")
    size = pd.to_numeric(df["size"], errors="coerce")

    origin = fmt.session_open
    if origin is None:
        origin = float(raw_time.min()) if raw_time.notna().any() else 0.0
    timestamp = raw_time - origin

    problems = [
        (raw_time.isna(), "unparsable timestamp {timestamp!r}"),
        (timestamp < 0, "timestamp {timestamp!r} precedes the session open"),
        (df["symbol"] == "", "empty symbol"),
        (~((price > 0) & np.isfinite(price)), "price must be a positive number, got {price!r}"),
        (~((size > 0) & np.isfinite(size) & (size == np.floor(size))), "size must be a positive integer, got {size!r}"),
        (df["buyer"] == "", "empty buyer id"),
        (df["seller"] == "", "empty seller id"),
    ]
    bad = pd.Series(False, index=df.index)
    for mask, _ in problems:
        bad |= mask.fillna(False).astype(bool)
    if bad.any():
        first = bad.idxmax()
        row = df.loc[first]
        reason = next(
            msg.format(**row.to_dict())
            for mask, msg in problems
            if bool(mask.fillna(False).loc[first])
        )
        bad_lines = [int(n) for n in lines[bad]]
        if len(bad_lines) > 1:
            reason += f" ({len(bad_lines) - 1} more malformed rows: lines {bad_lines[1:6]}...)"
        raise UnparsableRow(int(lines.loc[first]), reason, bad_lines)

    order = np.argsort(timestamp.to_numpy(), kind="stable")
    records = [
        TradeRecord(
            timestamp=float(t),
            symbol=str(sym),
            price=float(p),
            size=int(s),
            buyer_id=str(b),
            seller_id=str(se),
        )
        for t, sym, p, s, b, se in zip(
            timestamp.to_numpy()[order],
            df["symbol"].to_numpy()[order],
            price.to_numpy()[order],
            size.to_numpy()[order],
            df["buyer"].to_numpy()[order],
            df["seller"].to_numpy()[order],
        )
    ]
    logger.debug("parsed %d trades", len(records))
    return records


def load_tape(path: Union[str, Path], fmt: Optional[TapeFormat] = None) -> List[TradeRecord]:
    """Reads and parses one tape file."""
    filepath = Path(path)
    if not filepath.exists():
        raise FileNotFoundError(f"Tape file not found: {filepath}")
    with filepath.open("rb") as f:
        return parse_tape(f, fmt)


def load_tape_set(paths: Iterable[Union[str, Path]], fmt: Optional[TapeFormat] = None) -> Dict[str, List[TradeRecord]]:
    """Day-keyed tapes; the day key is the file stem (e.g. 2020-03-25.csv -> '2020-03-25')."""
    tapes: Dict[str, List[TradeRecord]] = {}
    for p in sorted(Path(x) for x in paths):
        if p.stem in tapes:
            raise ValueError(f"Duplicate day key {p.stem!r} in tape set")
        tapes[p.stem] = load_tape(p, fmt)
    return tapes


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def build_trader_paths(
    records: Sequence[TradeRecord],
    trader: str,
    wealth_convention: Union[WealthConvention, str] = WealthConvention.PAYMENT_SUM,
    *,
    symbol: Optional[str] = None,
    q0: float = 0.0,
    x0: float = 0.0,
    session_length: float = SESSION_LENGTH,
) -> tuple[PathSeries, PathSeries]:
    """
    Summary:
        Reconstructs a broker's inventory q_i and wealth x_i at the times it traded.

    Args:
        records: Tape records sorted by timestamp.
        trader: Broker identifier to follow.
        wealth_convention: PAYMENT_SUM (x_i - x_{i-1} = (q_i - q_{i-1}) s_i) or
            CASH_PLUS_MARK (cash plus inventory marked at the trade price).
        symbol: Keep only this ticker when the tape holds several.
        q0: Inventory before the first trade.
        x0: Wealth before the first trade.
        session_length: T in seconds.

    Returns:
        (inventory, wealth) PathSeries. Trades of the broker sharing a timestamp
        are merged into one observation marked at their size-weighted price.

    Raises:
        TraderNotFound: If the broker is on neither side of any selected trade.
    """
    convention = WealthConvention(wealth_convention)
    own = [
        r for r in records
        if (symbol is None or r.symbol == symbol) and trader in (r.buyer_id, r.seller_id)
    ]
    if not own:
        raise TraderNotFound(trader)

    times = np.array([r.timestamp for r in own], dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("records must be sorted by timestamp")
    size = np.array([r.size for r in own], dtype=float)
    price = np.array([r.price for r in own], dtype=float)
    side = np.array(
        [(r.buyer_id == trader) - (r.seller_id == trader) for r in own], dtype=float
    )

    obs_times, starts = np.unique(times, return_index=True)
    dq = np.add.reduceat(side * size, starts)
    payments = np.add.reduceat(side * size * price, starts)
    marks = np.add.reduceat(size * price, starts) / np.add.reduceat(size, starts)

    q = q0 + np.cumsum(dq)
    if convention is WealthConvention.PAYMENT_SUM:
        x = x0 + np.cumsum(payments)
    else:
        x = x0 - np.cumsum(payments) + q * marks

    if obs_times.size < times.size:
        logger.debug("merged %d same-time trades for %s", times.size - obs_times.size, trader)

    inventory = PathSeries(obs_times, q, PathKind.INVENTORY, session_length, initial=q0, marks=marks)
    wealth = PathSeries(obs_times, x, PathKind.WEALTH, session_length, initial=x0, marks=marks)
    return inventory, wealth


def resample_regular(path: PathSeries, bin_seconds: float) -> IncrementSeries:
    """
    Summary:
        Samples a path on the grid t_k = k * bin_seconds covering [0, T] with
        last-observation-carried-forward, and returns the grid increments.

    Args:
        path: The asynchronous path.
        bin_seconds: Delta_n, the grid spacing.

    Returns:
        floor(T / Delta_n) increments, all spanning Delta_n.

    Raises:
        BinLargerThanSession: If Delta_n > T.
        TooFewObservations: If the path is empty.
    """
    if not bin_seconds > 0:
        raise ValueError(f"bin_seconds must be > 0, got {bin_seconds}")
    horizon = float(path.session_length)
    if bin_seconds > horizon:
        raise BinLargerThanSession(f"bin of {bin_seconds}s exceeds the {horizon}s session")
    if len(path) == 0:
        raise TooFewObservations("cannot resample an empty path")

    n_bins = int(math.floor(round(horizon / bin_seconds, 9)))
    grid = np.arange(n_bins + 1, dtype=float) * bin_seconds
    idx = np.searchsorted(path.times, grid, side="right") - 1
    grid_values = np.where(idx >= 0, path.values[np.clip(idx, 0, None)], path.initial)
    return IncrementSeries(
        interval_lengths=np.full(n_bins, float(bin_seconds)),
        increments=np.diff(grid_values),
        horizon=horizon,
    )


def async_increments(path: PathSeries) -> IncrementSeries:
    """Increments between consecutive observations, with the elapsed time of each."""
    if len(path) < 2:
        raise TooFewObservations(f"need at least 2 observations, got {len(path)}")
    return IncrementSeries(
        interval_lengths=np.diff(path.times),
        increments=np.diff(path.values),
        horizon=float(path.session_length),
    )


def activity_filter(path: PathSeries, min_rate: float = MIN_RATE) -> bool:
    """True when the path has at least min_rate observations per minute of session."""
    if not path.session_length > 0:
        raise ValueError("session_length must be > 0")
    return len(path) >= min_rate * path.session_length / 60.0


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def path_to_frame(path: PathSeries) -> pd.DataFrame:
    return pd.DataFrame({"time": path.times, "value": path.values})


def write_path_csv(path: PathSeries, target: Union[str, Path]) -> Path:
    out = Path(target)
    out.parent.mkdir(parents=True, exist_ok=True)
    path_to_frame(path).to_csv(out, index=False, lineterminator="\n")
    return out


def write_path_json(path: PathSeries, target: Union[str, Path]) -> Path:
    out = Path(target)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = [{"time": float(t), "value": float(v)} for t, v in zip(path.times, path.values)]
    with out.open("w", encoding="utf-8", newline="\n") as f:
        json.dump(records, f, indent=2)
        f.write("\n")
    return out


def read_path_csv(
    source: Union[str, Path],
    kind: Union[PathKind, str] = PathKind.INVENTORY,
    session_length: float = SESSION_LENGTH,
    initial: float = 0.0,
) -> PathSeries:
    """Reads a two-column (time,value) CSV written by write_path_csv."""
    df = pd.read_csv(source)
    for col in ("time", "value"):
        if col not in df.columns:
            raise MissingColumn(col, list(df.columns))
    return PathSeries(df["time"].to_numpy(float), df["value"].to_numpy(float), PathKind(kind),
                      session_length, initial=initial)


def read_path_json(
    source: Union[str, Path],
    kind: Union[PathKind, str] = PathKind.INVENTORY,
    session_length: float = SESSION_LENGTH,
    initial: float = 0.0,
) -> PathSeries:
    """Reads the JSON records written by write_path_json."""
    with Path(source).open("r", encoding="utf-8") as f:
        records = json.load(f)
    times = [float(r["time"]) for r in records]
    values = [float(r["value"]) for r in records]
    return PathSeries(times, values, PathKind(kind), session_length, initial=initial)
