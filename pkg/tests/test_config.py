import json

import numpy as np
import pytest

from brownex.artifacts import RunArtifacts, to_jsonable
from brownex.config import COMMAND_DEFAULTS, COMMANDS, RunConfig, load_config_file, resolve_options


def test_every_command_has_defaults():
    assert set(COMMANDS) == set(COMMAND_DEFAULTS)
    for command in COMMANDS:
        assert {"seed", "workers", "output_dir"} <= set(COMMAND_DEFAULTS[command])


def test_flag_beats_file_beats_default():
    assert resolve_options("test-regular")["gamma"] == 3.0
    assert resolve_options("test-regular", {"gamma": 5.0})["gamma"] == 5.0
    assert resolve_options("test-regular", {"gamma": 5.0}, {"gamma": 7.0})["gamma"] == 7.0


def test_none_flags_do_not_override():
    opts = resolve_options("test-regular", {"sigma_prime": 2.0}, {"sigma_prime": None})
    assert opts["sigma_prime"] == 2.0


def test_command_section_wins_over_top_level():
    data = {"seed": 1, "n_sim": 10, "simulate": {"n_sim": 20}, "sweep": {"seed": 99}}
    opts = resolve_options("simulate", data)
    assert opts["n_sim"] == 20
    assert opts["seed"] == 1


def test_dashed_keys_are_normalised():
    opts = resolve_options("simulate", {"n-sim": 5, "test-regular": {"gamma": 9}})
    assert opts["n_sim"] == 5


def test_unknown_key_raises():
    with pytest.raises(ValueError, match="sigma_primo"):
        resolve_options("test-regular", {"sigma_primo": 1.0})
    with pytest.raises(ValueError):
        resolve_options("not-a-command")


def test_defaults_are_not_shared_between_runs():
    opts = resolve_options("paths")
    opts["columns"]["price"] = "px"
    assert resolve_options("paths")["columns"]["price"] == "price"


def test_load_yaml_json_toml(tmp_path):
    (tmp_path / "c.yaml").write_text("gamma: 4.0\nsweep:\n  seed: 3\n", encoding="utf-8")
    (tmp_path / "c.json").write_text(json.dumps({"gamma": 4.0, "sweep": {"seed": 3}}), encoding="utf-8")
    (tmp_path / "c.toml").write_text("gamma = 4.0\n[sweep]\nseed = 3\n", encoding="utf-8")
    for name in ("c.yaml", "c.json", "c.toml"):
        cfg = RunConfig.build("sweep", tmp_path / name)
        assert cfg.options["gamma"] == 4.0
        assert cfg.seed == 3


def test_load_rejects_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.yaml")
    (tmp_path / "c.ini").write_text("[x]\n", encoding="utf-8")
    with pytest.raises(ValueError, match="Unsupported"):
        load_config_file(tmp_path / "c.ini")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="mapping"):
        load_config_file(tmp_path / "list.yaml")


def test_workers_validated():
    with pytest.raises(ValueError):
        RunConfig.build("sweep", flag_options={"workers": 0})


def test_config_hash_is_stable_and_sensitive():
    a = RunConfig.build("test-regular", flag_options={"seed": 5})
    b = RunConfig.build("test-regular", flag_options={"seed": 5})
    c = RunConfig.build("test-regular", flag_options={"seed": 6})
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash
    assert len(a.config_hash) == 64


def test_manifest_round_trips_as_config(tmp_path):
    cfg = RunConfig.build("sweep", flag_options={"output_dir": str(tmp_path), "gamma": 6.0, "seed": 11})
    artifacts = RunArtifacts(cfg)
    artifacts.json("b.json", {"x": 1})
    artifacts.json("a.json", {"x": float("nan")})
    manifest = artifacts.manifest()

    body = json.loads(manifest.read_text(encoding="utf-8"))
    assert body["outputs"] == ["a.json", "b.json"]
    assert body["seed"] == 11
    assert body["partial"] is False
    assert json.loads((tmp_path / "a.json").read_text(encoding="utf-8")) == {"x": None}

    again = RunConfig.build("sweep", manifest)
    assert again.options == cfg.options
    assert again.config_hash == cfg.config_hash


def test_to_jsonable_handles_numpy():
    out = to_jsonable({"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": np.inf})
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": True, "d": None}
