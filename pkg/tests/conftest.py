from pathlib import Path
from typing import Iterable, List, Mapping

import numpy as np
import pytest

from brownex.marketdata import IncrementSeries, PathKind, PathSeries

HEADER = "timestamp,symbol,price,size,buyer,seller"


def write_tape(path: Path, rows: Iterable[Mapping]) -> Path:
    """Writes tape rows (dicts with the six default columns) as CSV."""
    lines = [HEADER]
    for r in rows:
        lines.append(f"{r['timestamp']},{r['symbol']},{r['price']},{r['size']},{r['buyer']},{r['seller']}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def inventory_rows(inventory_steps: Iterable[int], trader: str, symbol: str = "RY",
                   spacing: float = 10.0, price0: float = 100.0, start: float = 0.0,
                   counterparty: str = "CP") -> List[dict]:
    """
    One trade per step: the trader buys for positive steps and sells for negative
    ones. Zero steps become a 1-share self-trade so every step is an observation.
    """
    rows = []
    price = price0
    for i, step in enumerate(inventory_steps):
        step = int(step)
        t = start + (i + 1) * spacing
        price = round(price + 0.01 * ((i % 3) - 1), 4)
        if step > 0:
            buyer, seller, size = trader, counterparty, step
        elif step < 0:
            buyer, seller, size = counterparty, trader, -step
        else:
            buyer, seller, size = trader, trader, 1
        rows.append({"timestamp": t, "symbol": symbol, "price": price, "size": size,
                     "buyer": buyer, "seller": seller})
    return rows


def brownian_increments(rng: np.random.Generator, n: int, sigma: float, horizon: float = 1.0) -> IncrementSeries:
    dt = horizon / n
    return IncrementSeries(np.full(n, dt), sigma * np.sqrt(dt) * rng.standard_normal(n), horizon)


def zero_increments(n: int, horizon: float = 1.0) -> IncrementSeries:
    return IncrementSeries(np.full(n, horizon / n), np.zeros(n), horizon)


def brownian_path(rng: np.random.Generator, n: int, sigma: float, session_length: float) -> PathSeries:
    """Path observed at n equally spaced times in (0, T]."""
    dt = session_length / n
    times = dt * np.arange(1, n + 1)
    values = np.cumsum(sigma * np.sqrt(dt) * rng.standard_normal(n))
    return PathSeries(times, values, PathKind.INVENTORY, session_length)


@pytest.fixture
def small_tape(tmp_path):
    """Two buys and a sell for broker B1, plus an unrelated trade."""
    rows = [
        {"timestamp": 10, "symbol": "RY", "price": 10.0, "size": 100, "buyer": "B1", "seller": "S9"},
        {"timestamp": 20, "symbol": "RY", "price": 11.0, "size": 100, "buyer": "S9", "seller": "B1"},
        {"timestamp": 30, "symbol": "RY", "price": 12.0, "size": 50, "buyer": "X1", "seller": "X2"},
    ]
    return write_tape(tmp_path / "2020-03-25.csv", rows)
