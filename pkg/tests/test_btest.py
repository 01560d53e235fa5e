import math
from dataclasses import replace

import numpy as np
import pytest

from brownex.btest import (
    EtaEstimator,
    RegularTestConfig,
    TestMode,
    async_test,
    batch_runner,
    estimate_eta,
    fictitious_augment,
    normal_abs_moment,
    power_variation,
    regular_test,
    sensitivity_sweep,
    sweep_frame,
    truncated_quarticity,
    truncated_realized_volatility,
    truncation_level,
    z_alpha,
)
from brownex.errors import TooFewObservations
from brownex.marketdata import IncrementSeries, TradeRecord, resample_regular

from conftest import brownian_increments, brownian_path, inventory_rows, zero_increments


@pytest.fixture
def cfg():
    return RegularTestConfig(sigma_prime=1.0, gamma=3.0, alpha_level=0.05, seed=42)


# ---------- building blocks ----------


@pytest.mark.parametrize("r, expected", [(2, 1.0), (4, 3.0), (1, math.sqrt(2 / math.pi)), (0, 1.0)])
def test_normal_abs_moment(r, expected):
    assert normal_abs_moment(r) == pytest.approx(expected, abs=1e-12)


def test_normal_abs_moment_rejects_negative():
    with pytest.raises(ValueError):
        normal_abs_moment(-1)


def test_z_alpha():
    assert z_alpha(0.05) == pytest.approx(1.6448536269514722)


def test_augment_zero_sigma_is_identity():
    incs = IncrementSeries([1.0, 2.0], [0.5, -1.5], 3.0)
    out = fictitious_augment(incs, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.increments, incs.increments)
    assert np.array_equal(out.interval_lengths, incs.interval_lengths)


def test_augment_is_deterministic():
    incs = zero_increments(50)
    a = fictitious_augment(incs, 1.0, np.random.default_rng(7))
    b = fictitious_augment(incs, 1.0, np.random.default_rng(7))
    assert np.array_equal(a.increments, b.increments)


def test_augment_variance_matches_sigma_prime():
    incs = IncrementSeries(np.ones(100_000), np.zeros(100_000), 100_000.0)
    out = fictitious_augment(incs, 2.0, np.random.default_rng(1))
    assert 3.9 <= out.increments.var() <= 4.1


@pytest.mark.parametrize(
    "gamma, eta, delta, expected",
    [(3, 4, 1, 6.0), (3, 0, 1, 0.0), (3, 2.5, 300, 3 * math.sqrt(750))],
)
def test_truncation_level(gamma, eta, delta, expected):
    assert truncation_level(gamma, eta, delta) == pytest.approx(expected)


def test_estimate_eta_simple_cases():
    assert estimate_eta(zero_increments(10)) == 0.0
    unit = IncrementSeries(np.ones(100), np.ones(100), 100.0)
    assert estimate_eta(unit, EtaEstimator.SAMPLE_VARIANCE) == 1.0
    with pytest.raises(TooFewObservations):
        estimate_eta(IncrementSeries([1.0], [1.0], 1.0))


@pytest.mark.parametrize("method", list(EtaEstimator))
def test_estimate_eta_brownian(method):
    incs = brownian_increments(np.random.default_rng(3), 100_000, 2.0)
    assert 3.8 <= estimate_eta(incs, method) <= 4.2


def test_bipower_ignores_a_jump():
    incs = brownian_increments(np.random.default_rng(4), 100_000, 1.0)
    jumped = incs.with_increments(incs.increments + np.where(np.arange(100_000) == 5000, 1.0, 0.0))
    assert estimate_eta(jumped, EtaEstimator.BIPOWER) == pytest.approx(1.0, rel=0.03)
    assert estimate_eta(jumped, EtaEstimator.SAMPLE_VARIANCE) > 1.8


def test_truncated_estimators_by_hand():
    incs = IncrementSeries([1.0, 1.0, 1.0], [1.0, 2.0, 10.0], 3.0)
    assert truncated_realized_volatility(incs, 3.0) == (5.0, 2)
    assert truncated_realized_volatility(incs, 0.0) == (0.0, 0)
    assert truncated_realized_volatility(incs, math.inf) == (105.0, 3)
    assert truncated_quarticity(incs, 3.0) == 17.0
    assert truncated_quarticity(zero_increments(5), 1.0) == 0.0


def test_truncated_estimators_converge():
    n, c, c_prime = 100_000, 1.0, 1.0
    raw = brownian_increments(np.random.default_rng(5), n, math.sqrt(c))
    aug = fictitious_augment(raw, math.sqrt(c_prime), np.random.default_rng(6))
    u_n = truncation_level(8.0, estimate_eta(aug), 1.0 / n)
    c_hat, _ = truncated_realized_volatility(aug, u_n)
    b_hat = truncated_quarticity(aug, u_n)
    assert c_hat == pytest.approx(c + c_prime, rel=0.03)
    # B is of order Delta_n; rescaled it tends to 3 (c + c')^2 T
    assert b_hat * n == pytest.approx(3 * (c + c_prime) ** 2, rel=0.05)


def test_jump_is_truncated_exactly():
    rng = np.random.default_rng(8)
    values = rng.integers(-3, 4, size=200).astype(float)
    u_n = 5.0
    base = IncrementSeries(np.ones(200), values, 200.0)
    jumped = IncrementSeries(np.ones(201), np.append(values, 100 * u_n), 201.0)
    assert truncated_realized_volatility(jumped, u_n) == truncated_realized_volatility(base, u_n)
    assert truncated_quarticity(jumped, u_n) == truncated_quarticity(base, u_n)


@pytest.mark.parametrize("p, q, expected", [(2, 0, 13.0), (4, 1, 97.0)])
def test_power_variation_by_hand(p, q, expected):
    incs = IncrementSeries([1.0, 2.0], [3.0, -2.0], 3.0)
    assert power_variation(incs, p, q) == expected


def test_power_variation_zero_increments():
    assert power_variation(zero_increments(4), 3, 1) == 0.0


def test_power_variation_matches_untruncated_volatility():
    incs = brownian_increments(np.random.default_rng(9), 1000, 1.3)
    assert power_variation(incs, 2, 0) == truncated_realized_volatility(incs, math.inf)[0]


# ---------- regular test ----------


def test_regular_test_centering():
    # sigma' sqrt(dt) eps = +-0.5 -> C = 1 = c'T exactly
    incs = zero_increments(4)
    cfg = RegularTestConfig(sigma_prime=1.0, eta=100.0)
    res = regular_test(incs, cfg, eps=np.array([1.0, -1.0, 1.0, -1.0]))
    assert res.c_hat == res.c_prime_T == 1.0
    assert res.statistic == 0.0
    assert res.p_value == 0.5
    assert not res.reject_null


def test_regular_test_degenerate_quarticity():
    res = regular_test(zero_increments(10), RegularTestConfig(eta=0.0))
    assert res.degenerate
    assert res.p_value == 1.0
    assert not res.reject_null
    assert res.statistic == -math.inf


def test_regular_test_is_deterministic(cfg):
    incs = brownian_increments(np.random.default_rng(10), 500, 0.5)
    assert regular_test(incs, cfg).to_dict() == regular_test(incs, cfg).to_dict()


@pytest.mark.parametrize("seed", range(20))
def test_result_consistency(seed):
    sigma = [0.0, 0.5, 1.0, 2.0][seed % 4]
    incs = brownian_increments(np.random.default_rng(seed), 200, sigma)
    cfg = RegularTestConfig(sigma_prime=1.0, seed=seed)
    res = regular_test(incs, cfg)
    assert res.reject_null == (res.statistic > res.threshold) == (res.p_value < cfg.alpha_level)
    region = res.c_hat > res.c_prime_T + (res.threshold / math.sqrt(3)) * math.sqrt(2 * res.quarticity)
    assert region == res.reject_null
    ares = async_test(incs, cfg)
    assert ares.reject_null == (ares.statistic > ares.threshold) == (ares.p_value < cfg.alpha_level)


def test_regular_test_needs_equal_intervals(cfg):
    with pytest.raises(ValueError):
        regular_test(IncrementSeries([1.0, 2.0], [0.0, 0.0], 3.0), cfg)


def test_regular_test_detects_strong_brownian(cfg):
    incs = brownian_increments(np.random.default_rng(11), 10_000, 10.0)
    res = regular_test(incs, cfg)
    assert res.reject_null
    assert res.kind is TestMode.REGULAR


# ---------- async test ----------


def test_async_statistic_with_gaussian_moments(cfg):
    rng = np.random.default_rng(12)
    lengths = rng.exponential(1.0, 300)
    incs = IncrementSeries(lengths, rng.standard_normal(300), float(lengths.sum()))
    res = async_test(incs, cfg)
    expected = math.sqrt(3) * (res.c_hat - res.c_prime_T) / math.sqrt(2 * res.quarticity)
    assert res.statistic == pytest.approx(expected, rel=1e-12)
    assert res.kind is TestMode.ASYNC


def test_async_truncation_flag_drops_jumps():
    rng = np.random.default_rng(13)
    lengths = np.full(500, 2.0)
    values = np.sqrt(2.0) * rng.standard_normal(500)
    values[100] = 1e6
    incs = IncrementSeries(lengths, values, 1000.0)
    plain = async_test(incs, RegularTestConfig(eta=1.0))
    truncated = async_test(incs, RegularTestConfig(eta=1.0, async_truncate=True))
    assert plain.n_used == 500
    assert truncated.n_used < 500
    assert truncated.c_hat < plain.c_hat


# ---------- sweep ----------


def test_single_point_sweep_equals_direct_test(cfg):
    path = brownian_path(np.random.default_rng(14), 200, 1.0, 23400.0)
    (point,) = sensitivity_sweep(path, [cfg.sigma_prime], [cfg.gamma], cfg)
    direct = regular_test(resample_regular(path, cfg.bin_seconds), cfg)
    assert point.p_value == direct.p_value
    assert point.statistic == direct.statistic


def test_sweep_grid_shape(cfg):
    incs = brownian_increments(np.random.default_rng(15), 78, 1.0, 23400.0)
    points = sensitivity_sweep(incs, [0.5, 1.0, 2.0], [3.0, 5.0], cfg)
    frame = sweep_frame(points)
    assert len(frame) == 6
    assert list(frame.columns[:3]) == ["sigma_prime", "gamma", "p_value"]


def test_gamma_sweep_is_flat_without_jumps(cfg):
    incs = brownian_increments(np.random.default_rng(16), 78, 10.0, 23400.0)
    points = sensitivity_sweep(incs, [1.0], [3, 4, 5, 6, 7, 8, 9, 10], cfg)
    p = [pt.p_value for pt in points]
    assert max(p) - min(p) < 0.01


def test_sweep_rejects_empty_grid(cfg):
    with pytest.raises(ValueError):
        sensitivity_sweep(zero_increments(10), [], [3.0], cfg)


# ---------- batch ----------

SESSION = 3600.0


def _records(rows):
    return [TradeRecord(float(r["timestamp"]), r["symbol"], float(r["price"]), int(r["size"]),
                        r["buyer"], r["seller"]) for r in rows]


def _active_day(rng, traders, symbols):
    rows = []
    for k, trader in enumerate(traders):
        for j, symbol in enumerate(symbols):
            steps = rng.integers(100, 1000, 700) * rng.choice([-1, 1], 700)
            rows += inventory_rows(steps, trader, symbol, spacing=5.0, start=0.1 * (2 * k + j))
    rows.sort(key=lambda r: r["timestamp"])
    return _records(rows)


def _batch_cfg():
    return RegularTestConfig(sigma_prime=1.0, bin_seconds=30.0, seed=42)


def test_batch_all_days_reject():
    rng = np.random.default_rng(17)
    tapes = {"d1": _active_day(rng, ["B1"], ["RY"]), "d2": _active_day(rng, ["B1"], ["RY"])}
    report = batch_runner(tapes, ["B1"], ["RY"], _batch_cfg(), session_length=SESSION)
    assert report.percent.loc["B1", "RY"] == 100.0
    assert report.included.loc["B1", "RY"] == 2


def test_batch_inactive_day_is_excluded():
    rng = np.random.default_rng(18)
    quiet = _records(inventory_rows([5, -5, 5], "B1", "RY", spacing=100.0))
    tapes = {"d1": _active_day(rng, ["B1"], ["RY"]), "d2": quiet}
    report = batch_runner(tapes, ["B1"], ["RY"], _batch_cfg(), session_length=SESSION)
    assert report.included.loc["B1", "RY"] == 1
    assert report.excluded.loc["B1", "RY"] == 1
    assert report.percent.loc["B1", "RY"] == 100.0


def test_batch_trade_after_close_excludes_only_that_day():
    rng = np.random.default_rng(22)
    rows = inventory_rows(rng.integers(-500, 500, 390), "B1", "RY", spacing=60.0, start=-30.0)
    rows.append({"timestamp": 23460.0, "symbol": "RY", "price": 100.0, "size": 200,
                 "buyer": "B1", "seller": "CP"})
    late = _records(rows)
    assert late[-2].timestamp == 23370.0

    report = batch_runner({"d1": late}, ["B1"], ["RY"], RegularTestConfig())
    assert report.excluded.loc["B1", "RY"] == 1
    assert report.included.loc["B1", "RY"] == 0
    assert np.isnan(report.percent.loc["B1", "RY"])

    tapes = {"d1": late, "d2": _active_day(rng, ["B1"], ["RY"])}
    report = batch_runner(tapes, ["B1"], ["RY"], RegularTestConfig())
    assert report.excluded.loc["B1", "RY"] == 1
    assert report.included.loc["B1", "RY"] == 1
    assert report.percent.loc["B1", "RY"] in (0.0, 100.0)


def test_batch_missing_cell_is_nan():
    rng = np.random.default_rng(19)
    tapes = {"d1": _active_day(rng, ["B1"], ["RY"])}
    report = batch_runner(tapes, ["B1", "B2"], ["RY"], _batch_cfg(), session_length=SESSION)
    assert np.isnan(report.percent.loc["B2", "RY"])
    assert report.excluded.loc["B2", "RY"] == 1


def test_batch_brownian_corpus_and_workers():
    rng = np.random.default_rng(20)
    traders, symbols = ["B1", "B2"], ["RY", "TD"]
    tapes = {f"d{i}": _active_day(rng, traders, symbols) for i in range(3)}
    serial = batch_runner(tapes, traders, symbols, _batch_cfg(), TestMode.REGULAR,
                          session_length=SESSION)
    parallel = batch_runner(tapes, traders, symbols, _batch_cfg(), TestMode.REGULAR,
                            session_length=SESSION, workers=4)
    assert (serial.percent.values >= 95).all()
    assert serial.percent.equals(parallel.percent)
    counts = serial.counts_frame()
    assert len(counts) == 4
    assert set(counts.columns) >= {"trader", "symbol", "included", "excluded", "percent"}


def test_batch_async_wealth_mode():
    rng = np.random.default_rng(21)
    tapes = {"d1": _active_day(rng, ["B1"], ["RY"])}
    report = batch_runner(tapes, ["B1"], ["RY"], _batch_cfg(), "async", "wealth",
                          session_length=SESSION)
    assert report.included.loc["B1", "RY"] == 1
    assert report.percent.loc["B1", "RY"] == 100.0


def test_config_validation():
    with pytest.raises(ValueError):
        RegularTestConfig(sigma_prime=0.0)
    with pytest.raises(ValueError):
        RegularTestConfig(alpha_level=1.0)
    with pytest.raises(ValueError):
        RegularTestConfig(gamma=-1.0)
    assert replace(RegularTestConfig(), eta_estimator="bipower").eta_estimator is EtaEstimator.BIPOWER
