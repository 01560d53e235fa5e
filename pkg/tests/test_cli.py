import json

import numpy as np
import pandas as pd
import pytest

from brownex.cli import main

from conftest import inventory_rows, write_tape

SESSION = "3600"


def _active_tape(path, rng, traders=("B1",), symbols=("RY",)):
    rows = []
    for k, trader in enumerate(traders):
        for j, symbol in enumerate(symbols):
            steps = rng.integers(100, 1000, 700) * rng.choice([-1, 1], 700)
            rows += inventory_rows(steps, trader, symbol, spacing=5.0, start=0.1 * (2 * k + j))
    rows.sort(key=lambda r: r["timestamp"])
    return write_tape(path, rows)


@pytest.fixture
def tape(tmp_path):
    return _active_tape(tmp_path / "2020-03-25.csv", np.random.default_rng(1))


def _test_args(tape, out):
    return ["test-regular", "--tape", str(tape), "--trader", "B1", "--session-length", SESSION,
            "--bin-seconds", "30", "--output-dir", str(out)]


def test_test_regular_is_reproducible(tape, tmp_path, capsys):
    assert main(_test_args(tape, tmp_path / "a")) == 0
    assert main(_test_args(tape, tmp_path / "b")) == 0
    first = (tmp_path / "a" / "test_result.json").read_bytes()
    assert first == (tmp_path / "b" / "test_result.json").read_bytes()

    result = json.loads(first)
    assert result["reject_null"] is True
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["outputs"] == ["test_result.json"]
    assert manifest["command"] == "test-regular"
    assert "Wrote 1 file(s)" in capsys.readouterr().out


def test_manifest_reruns_the_same_test(tape, tmp_path):
    assert main(_test_args(tape, tmp_path / "a")) == 0
    rerun = ["test-regular", "--config", str(tmp_path / "a" / "manifest.json"),
             "--output-dir", str(tmp_path / "c")]
    assert main(rerun) == 0
    assert (tmp_path / "a" / "test_result.json").read_bytes() == \
        (tmp_path / "c" / "test_result.json").read_bytes()


def test_test_async_and_sweep(tape, tmp_path):
    out = tmp_path / "async"
    assert main(["test-async", "--tape", str(tape), "--trader", "B1", "--session-length", SESSION,
                 "--output-dir", str(out)]) == 0
    assert json.loads((out / "test_result.json").read_text(encoding="utf-8"))["kind"] == "async"

    out = tmp_path / "sweep"
    assert main(["sweep", "--tape", str(tape), "--trader", "B1", "--session-length", SESSION,
                 "--bin-seconds", "30", "--sigma-grid", "0.5,1,2", "--gamma-grid", "3,5",
                 "--output-dir", str(out)]) == 0
    sweep = pd.read_csv(out / "sweep.csv")
    assert list(sweep.columns) == ["sigma_prime", "gamma", "p_value"]
    assert len(sweep) == 6


def test_batch_percentages(tmp_path):
    rng = np.random.default_rng(2)
    tapes = [_active_tape(tmp_path / f"day{d}.csv", rng, ("B1", "B2"), ("RY", "TD")) for d in (1, 2)]
    out = tmp_path / "batch"
    args = ["batch", "--tapes", *map(str, tapes), "--traders", "B1", "B2", "--symbols", "RY", "TD",
            "--session-length", SESSION, "--bin-seconds", "30", "--output-dir", str(out)]
    assert main(args) == 0
    percent = pd.read_csv(out / "batch.csv")
    assert percent.shape == (2, 3)
    assert set(percent.iloc[:, 1:].to_numpy().ravel()) <= {0.0, 50.0, 100.0}
    counts = pd.read_csv(out / "batch_counts.csv")
    assert counts["included"].sum() == 8
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["days"] == ["day1", "day2"]
    assert manifest["partial"] is False


def test_batch_stops_on_bad_tape_with_partial_manifest(tmp_path):
    rng = np.random.default_rng(3)
    good = _active_tape(tmp_path / "day1.csv", rng)
    bad = tmp_path / "day2.csv"
    bad.write_text("timestamp,symbol,price,size,buyer,seller\n1,RY,-5,10,A,B\n", encoding="utf-8")
    out = tmp_path / "batch"
    args = ["batch", "--tapes", str(good), str(bad), "--traders", "B1", "--session-length", SESSION,
            "--bin-seconds", "30", "--output-dir", str(out)]
    assert main(args) == 1
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["partial"] is True
    assert manifest["days"] == ["day1"]


def test_batch_with_trade_after_close_still_writes_table(tmp_path):
    rng = np.random.default_rng(4)
    rows = inventory_rows(rng.integers(-500, 500, 390), "B1", "RY", spacing=60.0, start=-30.0)
    rows.append({"timestamp": 23460.0, "symbol": "RY", "price": 100.0, "size": 200,
                 "buyer": "B1", "seller": "CP"})
    late = write_tape(tmp_path / "day1.csv", rows)
    out = tmp_path / "batch"
    args = ["batch", "--tapes", str(late), "--traders", "B1", "--symbols", "RY",
            "--session-open", "0", "--output-dir", str(out)]
    assert main(args) == 0
    counts = pd.read_csv(out / "batch_counts.csv")
    assert counts["excluded"].sum() == 1
    assert counts["included"].sum() == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["partial"] is False
    assert manifest["days"] == ["day1"]


def test_batch_error_during_run_writes_partial_manifest(tape, tmp_path, monkeypatch):
    def _fail(*args, **kwargs):
        raise ValueError("cell blew up")

    monkeypatch.setattr("brownex.cli.batch_runner", _fail)
    out = tmp_path / "batch"
    args = ["batch", "--tapes", str(tape), "--traders", "B1", "--session-length", SESSION,
            "--output-dir", str(out)]
    assert main(args) == 1
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["partial"] is True
    assert manifest["days"] == ["2020-03-25"]
    assert not (out / "batch.csv").exists()


def test_batch_duplicate_day_keeps_first_tape(tmp_path):
    rng = np.random.default_rng(5)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = _active_tape(tmp_path / "a" / "day1.csv", rng)
    second = _active_tape(tmp_path / "b" / "day1.csv", rng)
    out = tmp_path / "batch"
    args = ["batch", "--tapes", str(first), str(second), "--traders", "B1",
            "--session-length", SESSION, "--bin-seconds", "30", "--output-dir", str(out)]
    assert main(args) == 1
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["partial"] is True
    assert manifest["days"] == ["day1"]


def test_gamma_help_recommends_larger_value(capsys):
    with pytest.raises(SystemExit):
        main(["test-regular", "--help"])
    assert "about 8" in " ".join(capsys.readouterr().out.split())


def test_paths_and_simulate(tape, tmp_path):
    paths_out = tmp_path / "paths"
    assert main(["paths", "--tape", str(tape), "--trader", "B1", "--session-length", SESSION,
                 "--output-dir", str(paths_out)]) == 0
    manifest = json.loads((paths_out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["outputs"] == ["inventory.csv", "inventory.json", "trade_grid.csv",
                                   "wealth.csv", "wealth.json"]
    grid = pd.read_csv(paths_out / "trade_grid.csv")
    assert len(grid) == 700

    sim_out = tmp_path / "sim"
    args = ["simulate", "--grid", str(paths_out / "trade_grid.csv"), "--session-length", SESSION,
            "--approach", "2", "--nsim", "100", "--alpha", "1e-6", "--kappa", "1e-3",
            "--sigma-price", "0.01", "--sigma-inv", "100", "--q0", "1000",
            "--output-dir", str(sim_out)]
    assert main(args) == 0
    band = pd.read_csv(sim_out / "wealth_band.csv")
    assert len(band) == len(grid)
    assert list(band.columns) == ["time", "lo", "median", "hi", "actual"]
    assert (band["lo"] <= band["hi"]).all()
    summary = json.loads((sim_out / "summary.json").read_text(encoding="utf-8"))
    assert 0.0 <= summary["outperformance"] <= 100.0
    assert summary["n_sim"] == 100 and summary["approach"] == 2
    assert (sim_out / "price_scenarios.csv").exists()
    kde = pd.read_csv(sim_out / "kde.csv")
    assert list(kde.columns) == ["x", "density"]


def test_estimate_writes_params(small_tape, tmp_path):
    out = tmp_path / "est"
    assert main(["estimate", "--tape", str(small_tape), "--trader", "B1", "--symbol", "RY",
                 "--spread", "0.05", "--output-dir", str(out)]) == 0
    params = json.loads((out / "params.json").read_text(encoding="utf-8"))
    assert params["alpha_perm"] > 0 and params["kappa_temp"] > 0
    assert params["inputs"]["history_days_used"] == 1

    sim_out = tmp_path / "sim"
    assert main(["simulate", "--tape", str(small_tape), "--trader", "B1", "--symbol", "RY",
                 "--params", str(out / "params.json"), "--nsim", "20", "--q0-from-terminal",
                 "--output-dir", str(sim_out)]) == 0
    assert (sim_out / "inventory_band.csv").exists()


def test_errors_exit_with_status_one(tmp_path, capsys):
    assert main(["test-regular", "--tape", str(tmp_path / "missing.csv"), "--trader", "B1",
                 "--output-dir", str(tmp_path / "x")]) == 1
    assert "Error:" in capsys.readouterr().err

    cfg = tmp_path / "bad.yaml"
    cfg.write_text("sigma_primo: 2\n", encoding="utf-8")
    assert main(["test-regular", "--config", str(cfg)]) == 1
    assert "sigma_primo" in capsys.readouterr().err


def test_unknown_trader_is_an_error(tape, tmp_path, capsys):
    assert main(["paths", "--tape", str(tape), "--trader", "NOPE", "--output-dir", str(tmp_path)]) == 1
    assert "NOPE" in capsys.readouterr().err
