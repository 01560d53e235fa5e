"""
Optimal execution with a Brownian inventory and its Monte Carlo comparison
against a real trader's day.

The trader controls a rate nu on top of an exogenous Brownian order flow
sigma~ dW~. Permanent impact alpha moves the price, temporary impact kappa is
paid on every share, and inventory is penalised by A at the horizon and phi
along the way. The value function is x + qs + (linear and quadratic terms in q)
and the optimal rate is linear in inventory:

    nu(t, q) = ((alpha - eta_t) q - chi_t) / (2 kappa)

with eta the solution of a Riccati equation run backward from eta_T = 2A.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, interpolate, stats

from .data.data import EXECUTION_DEFAULTS, RUNNING_PENALTY, SESSION_LENGTH, TERMINAL_PENALTY
from .errors import MissingColumn, RiccatiBlowup
from .marketdata import PathSeries
from .seeding import scenario_normals

logger = logging.getLogger(__name__)

RK4_MIN_STEPS = 10_000
RK4_MAX_STEPS = 200_000


class RiccatiBranch(str, Enum):
    CLOSED_FORM = "closed_form"
    RK4 = "rk4"
    RADAU = "radau"


@dataclass(frozen=True)
class ExecutionParams:
    """
    Model constants for one trading day.

    Attributes:
        alpha_perm: Permanent impact alpha (price per share per unit rate).
        kappa_temp: Temporary impact kappa, > 0.
        sigma_price: Price volatility per sqrt(second).
        sigma_inv: Exogenous inventory volatility sigma~.
        terminal_penalty: A.
        running_penalty: phi.
        horizon: T in seconds.
        q0: Initial inventory.
        q_target: Terminal inventory the penalty A pulls toward.
    """

    alpha_perm: float
    kappa_temp: float
    sigma_price: float = 0.0
    sigma_inv: float = 0.0
    terminal_penalty: float = TERMINAL_PENALTY
    running_penalty: float = RUNNING_PENALTY
    horizon: float = SESSION_LENGTH
    q0: float = 0.0
    q_target: float = float(EXECUTION_DEFAULTS["q_target"])

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not self.kappa_temp > 0:
            raise ValueError(f"kappa_temp must be > 0, got {self.kappa_temp}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.sigma_inv < 0 or self.sigma_price < 0:
            raise ValueError("sigma_inv and sigma_price must be >= 0")
        if self.terminal_penalty < 0 or self.running_penalty < 0:
            raise ValueError("terminal_penalty and running_penalty must be >= 0")

    @property
    def closed_form_applies(self) -> bool:
        return self.alpha_perm ** 2 < 4.0 * self.kappa_temp * self.running_penalty

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExecutionParams":
        """Builds params from a mapping (e.g. a params.json); unknown keys are ignored."""
        known = {k: data[k] for k in cls.__dataclass_fields__ if data.get(k) is not None}
        missing = [k for k in ("alpha_perm", "kappa_temp") if k not in known]
        if missing:
            raise ValueError(f"ExecutionParams is missing {missing}")
        return cls(**known)


@dataclass(frozen=True, eq=False)
class TradeGrid:
    """The actual trader's day: trade times, prices, inventory and wealth."""

    times: np.ndarray
    prices: np.ndarray
    actual_inventory: np.ndarray
    actual_wealth: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("times", "prices", "actual_inventory", "actual_wealth"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, arrays[name])
        sizes = {a.size for a in arrays.values()}
        if len(sizes) != 1:
            raise ValueError(f"TradeGrid columns have different lengths: "
                             f"{ {k: v.size for k, v in arrays.items()} }")
        if self.times.size == 0:
            raise ValueError("TradeGrid must not be empty")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("TradeGrid times must be strictly increasing")

    def __len__(self) -> int:
        return int(self.times.size)

    @classmethod
    def from_paths(cls, inventory: PathSeries, wealth: PathSeries) -> "TradeGrid":
        """Grid of the reconstructed paths; prices are the per-observation marks."""
        if inventory.marks is None:
            raise ValueError("inventory path carries no trade prices (marks)")
        if not np.array_equal(inventory.times, wealth.times):
            raise ValueError("inventory and wealth paths must share their times")
        return cls(inventory.times, inventory.marks, inventory.values, wealth.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time": self.times,
            "price": self.prices,
            "inventory": self.actual_inventory,
            "wealth": self.actual_wealth,
        })


def write_trade_grid(grid: TradeGrid, target: Union[str, Path]) -> Path:
    out = Path(target)
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.to_frame().to_csv(out, index=False, lineterminator="\n")
    return out


def read_trade_grid(source: Union[str, Path]) -> TradeGrid:
    """Reads a time,price,inventory,wealth CSV."""
    filepath = Path(source)
    if not filepath.exists():
        raise FileNotFoundError(f"Trade grid not found: {filepath}")
    df = pd.read_csv(filepath)
    for col in ("time", "price", "inventory", "wealth"):
        if col not in df.columns:
            raise MissingColumn(col, list(df.columns))
    return TradeGrid(df["time"].to_numpy(float), df["price"].to_numpy(float),
                     df["inventory"].to_numpy(float), df["wealth"].to_numpy(float))


# ---------------------------------------------------------------------------
# Riccati equation for eta
# ---------------------------------------------------------------------------


def riccati_rhs(eta: Union[float, np.ndarray], p: ExecutionParams) -> Union[float, np.ndarray]:
    """d(eta)/dt = eta^2/(2 kappa) - (alpha/kappa) eta + alpha^2/(2 kappa) - 2 phi."""
    a, k = p.alpha_perm, p.kappa_temp
    return eta * eta / (2.0 * k) - (a / k) * eta + (a * a / (2.0 * k) - 2.0 * p.running_penalty)


def _closed_form(p: ExecutionParams) -> Callable[[np.ndarray], np.ndarray]:
    """
    eta as a function of time-to-go tau = T - t.

    With y = eta - alpha the equation reduces to dy/dtau = (b^2 - y^2)/(2 kappa),
    b = 2 sqrt(kappa phi), solved by
        y(tau) = b (y_T + b tanh(beta tau)) / (b + y_T tanh(beta tau)),  beta = sqrt(phi/kappa).
    tanh saturates, so full sessions in seconds do not overflow.
    """
    a, k, phi = p.alpha_perm, p.kappa_temp, p.running_penalty
    b = 2.0 * math.sqrt(k * phi)
    beta = math.sqrt(phi / k)
    y_T = 2.0 * p.terminal_penalty - a

    def eta(tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if y_T == b:
            return np.full(tau.shape, 2.0 * p.terminal_penalty)
        h = np.tanh(beta * tau)
        den = b + y_T * h
        if np.any(den <= 0):
            raise RiccatiBlowup("closed-form eta has a pole inside the horizon")
        out = a + b * (y_T + b * h) / den
        return np.where(tau == 0.0, 2.0 * p.terminal_penalty, out)

    return eta


def _rk4(p: ExecutionParams, n_steps: int) -> Callable[[np.ndarray], np.ndarray]:
    T = p.horizon
    h = T / n_steps
    taus = np.linspace(0.0, T, n_steps + 1)
    values = np.empty(n_steps + 1)
    y = 2.0 * p.terminal_penalty
    values[0] = y

    def f(e: float) -> float:
        return -riccati_rhs(e, p)

    for i in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not math.isfinite(y) or abs(y) > 1e300:
            raise RiccatiBlowup(f"RK4 eta diverged at t = {T - taus[i + 1]:.6g}")
        values[i + 1] = y

    spline = interpolate.CubicHermiteSpline(taus, values, -riccati_rhs(values, p))
    return lambda tau: spline(np.asarray(tau, dtype=float))


def _radau(p: ExecutionParams) -> Callable[[np.ndarray], np.ndarray]:
    sol = integrate.solve_ivp(
        lambda tau, e: -riccati_rhs(e, p),
        (0.0, p.horizon),
        [2.0 * p.terminal_penalty],
        method="Radau",
        jac=lambda tau, e: [[-(e[0] - p.alpha_perm) / p.kappa_temp]],
        dense_output=True,
        rtol=1e-10,
        atol=1e-14,
    )
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise RiccatiBlowup(f"Radau integration of eta failed: {sol.message}")
    return lambda tau: sol.sol(np.asarray(tau, dtype=float))[0]


def _rk4_steps(p: ExecutionParams) -> int:
    # Linearised stiffness |d f / d eta| = |eta - alpha| / kappa, bounded along the
    # solution by max(|2A - alpha|, 2 sqrt(kappa phi)).
    scale = max(abs(2.0 * p.terminal_penalty - p.alpha_perm),
                2.0 * math.sqrt(p.kappa_temp * p.running_penalty), 1e-300)
    h_stable = p.kappa_temp / scale
    return max(RK4_MIN_STEPS, int(math.ceil(p.horizon / h_stable)))


@lru_cache(maxsize=32)
def _eta_solver(p: ExecutionParams, method: str) -> Tuple[Callable[[np.ndarray], np.ndarray], RiccatiBranch]:
    branch = RiccatiBranch(method) if method != "auto" else None
    if branch is None:
        if p.closed_form_applies:
            branch = RiccatiBranch.CLOSED_FORM
        else:
            branch = RiccatiBranch.RK4 if _rk4_steps(p) <= RK4_MAX_STEPS else RiccatiBranch.RADAU
            logger.warning("alpha^2 >= 4 kappa phi; eta integrated numerically (%s)", branch.value)

    if branch is RiccatiBranch.CLOSED_FORM:
        if p.running_penalty <= 0:
            raise ValueError("closed form needs running_penalty > 0")
        return _closed_form(p), branch
    if branch is RiccatiBranch.RK4:
        return _rk4(p, _rk4_steps(p)), branch
    return _radau(p), branch


@dataclass(frozen=True, eq=False)
class EtaCurve:
    times: np.ndarray
    values: np.ndarray
    branch: RiccatiBranch


def eta_curve(times: Sequence[float], p: ExecutionParams, method: str = "auto") -> EtaCurve:
    """
    Summary:
        Evaluates eta on a set of times.

    Args:
        times: Times in [0, T].
        p: Model parameters.
        method: "auto" (closed form when alpha^2 < 4 kappa phi, else RK4, or
            Radau when RK4 would need too many steps), or one branch by name.

    Returns:
        The EtaCurve, with the branch that produced it.

    Raises:
        RiccatiBlowup: If eta escapes to infinity inside the horizon.
    """
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size and (t.min() < 0 or t.max() > p.horizon * (1 + 1e-12)):
        raise ValueError(f"times must lie in [0, {p.horizon}]")
    solver, branch = _eta_solver(p, method)
    tau = np.clip(p.horizon - t, 0.0, None)
    values = np.where(tau == 0.0, 2.0 * p.terminal_penalty, np.asarray(solver(tau), dtype=float))
    if not np.all(np.isfinite(values)):
        raise RiccatiBlowup("eta is not finite on the requested times")
    return EtaCurve(t, values, branch)


def eta_fn(t: float, p: ExecutionParams) -> float:
    return float(eta_curve([t], p).values[0])


def chi_fn(t: float, p: ExecutionParams) -> float:
    """
    Linear term of v(t, q) = eta_t q + chi_t. Zero unless q_target != 0, in which
    case chi_T = -2 A q_target decays backward at rate (eta - alpha)/(2 kappa).
    """
    if p.q_target == 0.0 or p.terminal_penalty == 0.0:
        return 0.0
    chi_T = -2.0 * p.terminal_penalty * p.q_target
    if t >= p.horizon:
        return chi_T
    decay, _ = integrate.quad(
        lambda s: (eta_fn(s, p) - p.alpha_perm) / (2.0 * p.kappa_temp), t, p.horizon, limit=200
    )
    return chi_T * math.exp(-decay)


def v_fn(t: float, q: float, p: ExecutionParams) -> float:
    return eta_fn(t, p) * q + chi_fn(t, p)


def optimal_rate(t: float, q: float, p: ExecutionParams) -> float:
    """nu = (alpha q - v(t, q)) / (2 kappa)."""
    return (p.alpha_perm * q - v_fn(t, q, p)) / (2.0 * p.kappa_temp)


def riccati_residual(p: ExecutionParams, n_points: int = 101, step: Optional[float] = None) -> float:
    """Max |central-difference d(eta)/dt - rhs(eta)| over interior points of [0, T]."""
    if not p.closed_form_applies:
        raise ValueError("riccati_residual checks the closed form; needs alpha^2 < 4 kappa phi")
    T = p.horizon
    h = step if step is not None else T * 1e-4
    t = np.linspace(0.0, T, n_points)[1:-1]
    t = t[(t - h >= 0) & (t + h <= T)]
    eta = _closed_form(p)
    deriv = (eta(T - (t + h)) - eta(T - (t - h))) / (2.0 * h)
    return float(np.max(np.abs(deriv - riccati_rhs(eta(T - t), p)), initial=0.0))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ensemble:
    """n_sim simulated days on the TradeGrid times; column 0 is the initial state."""

    times: np.ndarray
    inventory_paths: np.ndarray
    wealth_paths: np.ndarray
    n_sim: int
    seed: int
    approach: int
    branch: RiccatiBranch
    price_paths: Optional[np.ndarray] = None
    negative_price: bool = False


def _control_terms(grid: TradeGrid, p: ExecutionParams) -> Tuple[np.ndarray, np.ndarray, RiccatiBranch]:
    curve = eta_curve(grid.times, p)
    chi = np.array([chi_fn(t, p) for t in grid.times]) if p.q_target else np.zeros(len(grid))
    return curve.values, chi, curve.branch


def simulate_approach1(grid: TradeGrid, p: ExecutionParams, n_sim: int, seed: int,
                       workers: int = 1) -> Ensemble:
    """
    Summary:
        Simulates the optimal strategy against the observed trade prices.

        q_i = q_{i-1} + nu dt + sigma~ sqrt(dt) e~
        x_i = x_{i-1} - nu s_{i-1} dt - sigma~ s_{i-1} sqrt(dt) e~

        The temporary-impact cost is left out; it is already in the observed prices.

    Args:
        grid: The actual day.
        p: Model parameters (q0 is the starting inventory).
        n_sim: Scenarios.
        seed: Master seed; scenario j uses its own stream.
        workers: Threads filling the noise rows.

    Returns:
        The Ensemble.
    """
    if n_sim < 1:
        raise ValueError(f"n_sim must be >= 1, got {n_sim}")
    n = len(grid)
    eta, chi, branch = _control_terms(grid, p)
    noise = scenario_normals(seed, n_sim, n - 1, "inventory", workers)
    dt = np.diff(grid.times)

    q = np.empty((n_sim, n))
    x = np.empty((n_sim, n))
    q[:, 0], x[:, 0] = p.q0, 0.0
    for i in range(1, n):
        nu = ((p.alpha_perm - eta[i - 1]) * q[:, i - 1] - chi[i - 1]) / (2.0 * p.kappa_temp)
        shock = p.sigma_inv * math.sqrt(dt[i - 1]) * noise[:, i - 1]
        s = grid.prices[i - 1]
        q[:, i] = q[:, i - 1] + nu * dt[i - 1] + shock
        x[:, i] = x[:, i - 1] - nu * s * dt[i - 1] - s * shock

    return Ensemble(grid.times.copy(), q, x, n_sim, int(seed), 1, branch)


def simulate_approach2(grid: TradeGrid, p: ExecutionParams, n_sim: int, seed: int,
                       workers: int = 1) -> Ensemble:
    """
    Summary:
        Simulates the optimal strategy with its own price path.

        s_i = s_{i-1} + alpha nu dt + sigma sqrt(dt) e
        q_i = q_{i-1} + nu dt + sigma~ sqrt(dt) e~
        x_i = x_{i-1} - nu (s_{i-1} + kappa nu) dt - sigma~ (s_{i-1} + kappa nu) sqrt(dt) e~

        e and e~ are independent. Arithmetic prices may cross zero; such runs
        are kept and flagged.
    """
    if n_sim < 1:
        raise ValueError(f"n_sim must be >= 1, got {n_sim}")
    n = len(grid)
    eta, chi, branch = _control_terms(grid, p)
    inv_noise = scenario_normals(seed, n_sim, n - 1, "inventory", workers)
    price_noise = scenario_normals(seed, n_sim, n - 1, "price", workers)
    dt = np.diff(grid.times)

    q = np.empty((n_sim, n))
    x = np.empty((n_sim, n))
    s = np.empty((n_sim, n))
    q[:, 0], x[:, 0], s[:, 0] = p.q0, 0.0, grid.prices[0]
    for i in range(1, n):
        h = dt[i - 1]
        nu = ((p.alpha_perm - eta[i - 1]) * q[:, i - 1] - chi[i - 1]) / (2.0 * p.kappa_temp)
        paid = s[:, i - 1] + p.kappa_temp * nu
        shock = p.sigma_inv * math.sqrt(h) * inv_noise[:, i - 1]
        s[:, i] = s[:, i - 1] + p.alpha_perm * nu * h + p.sigma_price * math.sqrt(h) * price_noise[:, i - 1]
        q[:, i] = q[:, i - 1] + nu * h + shock
        x[:, i] = x[:, i - 1] - nu * paid * h - paid * shock

    negative = bool(np.any(s <= 0))
    if negative:
        n_bad = int(np.any(s <= 0, axis=1).sum())
        logger.warning("%d of %d scenarios reached a non-positive price", n_bad, n_sim)
    return Ensemble(grid.times.copy(), q, x, n_sim, int(seed), 2, branch,
                    price_paths=s, negative_price=negative)


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Percentile bands, terminal-wealth comparison and KDE of an ensemble."""

    times: np.ndarray
    band: Tuple[float, float]
    inventory_lo: np.ndarray
    inventory_median: np.ndarray
    inventory_hi: np.ndarray
    wealth_lo: np.ndarray
    wealth_median: np.ndarray
    wealth_hi: np.ndarray
    actual_inventory: np.ndarray
    actual_wealth: np.ndarray
    mean_terminal_wealth: float
    outperformance: float
    kde_grid: Optional[np.ndarray] = None
    kde_density: Optional[np.ndarray] = None
    kde_degenerate: bool = False
    extra: Dict[str, Any] = field(default_factory=dict)

    def band_frame(self, which: str) -> pd.DataFrame:
        """time, lo, median, hi, actual for 'inventory' or 'wealth'."""
        if which not in ("inventory", "wealth"):
            raise ValueError(f"which must be 'inventory' or 'wealth', got {which!r}")
        return pd.DataFrame({
            "time": self.times,
            "lo": getattr(self, f"{which}_lo"),
            "median": getattr(self, f"{which}_median"),
            "hi": getattr(self, f"{which}_hi"),
            "actual": getattr(self, f"actual_{which}"),
        })

    def kde_frame(self) -> pd.DataFrame:
        if self.kde_grid is None:
            return pd.DataFrame(columns=["x", "density"])
        return pd.DataFrame({"x": self.kde_grid, "density": self.kde_density})


def ensemble_stats(e: Ensemble, actual: TradeGrid, lo: float = 5.0, hi: float = 95.0,
                   kde_points: int = 1024) -> EnsembleSummary:
    """
    Summary:
        Summarises an ensemble against the actual day.

    Args:
        e: The simulated ensemble.
        actual: The grid it was simulated on.
        lo: Lower percentile of the bands.
        hi: Upper percentile of the bands.
        kde_points: Points of the KDE grid.

    Returns:
        EnsembleSummary with pointwise bands, the mean simulated terminal wealth,
        the share of scenarios ending strictly above the actual terminal wealth
        and a Silverman-bandwidth Gaussian KDE of terminal wealth. The KDE is
        None (and `kde_degenerate` set) when terminal wealth has no spread.
    """
    if not 0.0 <= lo < hi <= 100.0:
        raise ValueError(f"need 0 <= lo < hi <= 100, got lo={lo}, hi={hi}")
    if e.inventory_paths.shape[1] != len(actual):
        raise ValueError("ensemble and trade grid have different lengths")

    def _bands(paths: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo_b, med, hi_b = np.percentile(paths, [lo, 50.0, hi], axis=0)
        return lo_b, med, hi_b

    inv_lo, inv_med, inv_hi = _bands(e.inventory_paths)
    w_lo, w_med, w_hi = _bands(e.wealth_paths)

    terminal = e.wealth_paths[:, -1]
    actual_terminal = float(actual.actual_wealth[-1])
    outperformance = 100.0 * float(np.count_nonzero(terminal > actual_terminal)) / e.n_sim

    kde_grid = kde_density = None
    degenerate = terminal.size < 2 or float(np.ptp(terminal)) == 0.0
    if not degenerate:
        try:
            kde = stats.gaussian_kde(terminal, bw_method="silverman")
        except np.linalg.LinAlgError:
            degenerate = True
        else:
            bw = float(np.sqrt(kde.covariance[0, 0]))
            kde_grid = np.linspace(terminal.min() - 5.0 * bw, terminal.max() + 5.0 * bw, kde_points)
            kde_density = kde(kde_grid)
    if degenerate:
        logger.info("terminal wealth has no spread; KDE skipped")

    return EnsembleSummary(
        times=e.times,
        band=(float(lo), float(hi)),
        inventory_lo=inv_lo,
        inventory_median=inv_med,
        inventory_hi=inv_hi,
        wealth_lo=w_lo,
        wealth_median=w_med,
        wealth_hi=w_hi,
        actual_inventory=actual.actual_inventory,
        actual_wealth=actual.actual_wealth,
        mean_terminal_wealth=float(terminal.mean()),
        outperformance=outperformance,
        kde_grid=kde_grid,
        kde_density=kde_density,
        kde_degenerate=degenerate,
        extra={"branch": e.branch.value, "approach": e.approach, "n_sim": e.n_sim,
               "seed": e.seed, "negative_price": e.negative_price},
    )


def scenario_frame(paths: np.ndarray, times: np.ndarray, k: int) -> pd.DataFrame:
    """First k scenario paths as columns scenario_0 .. scenario_{k-1}."""
    k = min(int(k), paths.shape[0])
    data = {"time": times}
    data.update({f"scenario_{j}": paths[j] for j in range(k)})
    return pd.DataFrame(data)
