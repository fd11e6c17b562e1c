import csv
import io
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from discrete_flow.bounds import early_stopping_bound
from discrete_flow.cli import main
from discrete_flow.config import ExperimentConfig, load_config, parse_config
from discrete_flow.core import Schedule, StateSpace
from discrete_flow.exceptions import ConfigError

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.json"


def write_config(tmp_path, name="cfg.json", **fields):
    obj = {"vocab_size": 2, "dim": 2, "tau": 0.1, "seed": 42, **fields}
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(Path(path).read_text())


# -- config parsing --------------------------------------------------------------------

def test_default_config_file():
    cfg = load_config(DEFAULT)
    assert (cfg.vocab_size, cfg.dim, cfg.tau, cfg.seed) == (2, 2, 0.1, 42)
    assert cfg.schedule == {"kind": "linear"} and cfg.target == "uniform"


@pytest.mark.parametrize("bad,fragment", [
    ({"extra": 1}, "unknown config keys"),
    ({"tau": 1e-7}, "tau"),
    ({"tau": 0.5}, "tau"),
    ({"vocab_size": 1}, "vocab_size"),
    ({"dim": 2.5}, "dim"),
    ({"seed": -1}, "seed"),
    ({"seed": True}, "seed"),
    ({"schedule": {"kind": "exp"}}, "schedule"),
    ({"schedule": {"kind": "linear", "rate": 2}}, "schedule"),
    ({"clamp": [0.0, 1.0]}, "clamp"),
    ({"clamp": [2.0, 1.0]}, "clamp"),
    ({"target": "point:9"}, "point"),
    ({"target": [0.5, 0.5]}, "inline target"),
    ({"target": [0.5, 0.5, 0.5, -0.5]}, "target"),
    ({"sweep": {"taus": [0.7]}}, "sweep"),
    ({"sweep": {"grid": []}}, "sweep"),
    ({"n_samples": 0}, "n_samples"),
])
def test_parse_config_rejects(bad, fragment):
    obj = {"vocab_size": 2, "dim": 2, "tau": 0.1, "seed": 42, **bad}
    with pytest.raises(ConfigError, match=fragment):
        parse_config(obj)


def test_parse_config_requires_explicit_seed():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"vocab_size": 2, "dim": 2, "tau": 0.1})


def test_target_forms(tmp_path):
    sp = StateSpace(2, 2)
    assert parse_config({"vocab_size": 2, "dim": 2, "tau": 0.1, "seed": 1, "target": "point:3"}
                        ).target_model().p1.mass[3] == 1.0
    dist_file = tmp_path / "p1.json"
    dist_file.write_text(json.dumps({"vocab_size": 2, "dim": 2, "mass": [0.1, 0.2, 0.3, 0.4]}))
    cfg = load_config(write_config(tmp_path, target="p1.json"))
    assert np.allclose(cfg.target_model().p1.mass, [0.1, 0.2, 0.3, 0.4])
    assert cfg.space == sp


def test_config_json_is_fully_resolved():
    cfg = parse_config({"vocab_size": 2, "dim": 2, "tau": 0.1, "seed": 1})
    obj = cfg.to_json()
    assert set(obj) == set(ExperimentConfig.__dataclass_fields__) - {"out_dir"}
    assert obj["clamp"] == [1e-3, 20.0] and json.loads(json.dumps(obj)) == obj


# -- exit codes ------------------------------------------------------------------------

def test_validate_default_config_exits_zero(tmp_path):
    assert run("validate", "--config", DEFAULT, "--out", tmp_path) == 0
    rep = read_json(tmp_path / "validate.json")
    assert rep["passed"] is True and rep["schema_version"] == 1
    names = [c["name"] for c in rep["checks"]]
    assert len(names) == 10 and all({"value", "threshold", "passed"} <= set(c) for c in rep["checks"])


def test_validate_names_first_failing_check(tmp_path, capsys, monkeypatch):
    import discrete_flow.validation as v

    monkeypatch.setattr(v, "SUITE", (v.early_stopping, lambda cfg: v.Check("forced", False, 2.0, 1.0)))
    assert run("validate", "--config", DEFAULT, "--out", tmp_path) == 1
    assert "forced" in capsys.readouterr().err


def test_tau_below_floor_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, tau=1e-7, target="point:0")
    assert run("validate", "--config", cfg, "--out", tmp_path) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path):
    assert run("train", "--config", write_config(tmp_path, bogus=1), "--out", tmp_path) == 2


def test_bad_json_is_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert run("train", "--config", path, "--out", tmp_path) == 2


def test_missing_config_is_io_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("train", "--config", missing, "--out", tmp_path) == 3
    assert str(missing) in capsys.readouterr().err


def test_seed_flag_validation(tmp_path):
    assert run("train", "--config", DEFAULT, "--seed", -3, "--out", tmp_path) == 2
    assert run("train", "--config", DEFAULT, "--threads", 0, "--out", tmp_path) == 2


def test_corrupted_model_is_load_error_with_path(tmp_path, capsys):
    model = tmp_path / "model.json"
    model.write_text('{"bins": 2, "entries": [')
    assert run("sample", "--config", DEFAULT, "--out", tmp_path, "--model", model) == 3
    err = capsys.readouterr().err
    assert "load error" in err and str(model) in err


def test_missing_model_is_io_error(tmp_path, capsys):
    assert run("sample", "--config", DEFAULT, "--out", tmp_path) == 3
    assert "model.json" in capsys.readouterr().err


# -- train ---------------------------------------------------------------------------

def test_train_is_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--config", DEFAULT, "--out", a) == 0
    assert run("train", "--config", DEFAULT, "--out", b) == 0
    for name in ("model.json", "loss_report.json", "dataset.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    assert run("train", "--config", DEFAULT, "--out", c, "--seed", 43) == 0
    assert (a / "model.json").read_bytes() != (c / "model.json").read_bytes()


def test_train_uniform_target_has_zero_approximation(tmp_path):
    assert run("train", "--config", DEFAULT, "--out", tmp_path) == 0
    loss = read_json(tmp_path / "loss_report.json")
    assert abs(loss["loss"]["approximation"]) <= 1e-12
    assert loss["config"]["seed"] == 42


def test_trained_model_round_trips_into_sample(tmp_path):
    assert run("train", "--config", DEFAULT, "--out", tmp_path) == 0
    assert run("sample", "--config", DEFAULT, "--out", tmp_path) == 0
    rep = read_json(tmp_path / "sample_report.json")["sample"]
    assert rep["tv_to_model_marginal"] <= 3 * rep["mc_error"]
    assert rep["model"] == "model.json" and len(rep["model_sha256"]) == 64


# -- sample --------------------------------------------------------------------------

def test_sample_zero_model_stays_uniform(tmp_path):
    assert run("sample", "--config", DEFAULT, "--out", tmp_path, "--model", "zero") == 0
    rep = read_json(tmp_path / "sample_report.json")["sample"]
    assert rep["poisson_draws"] == 0
    assert rep["tv_to_model_marginal"] <= 3 * rep["mc_error"]
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0] == "x" and len(lines) == 20_001


def test_sample_oracle_end_to_end(tmp_path):
    cfg = write_config(tmp_path, vocab_size=2, dim=1, tau=0.01, target=[0.9, 0.1], n_trajectories=100_000)
    assert run("sample", "--config", cfg, "--out", tmp_path, "--model", "oracle") == 0
    rep = read_json(tmp_path / "sample_report.json")["sample"]
    rho = early_stopping_bound(Schedule("linear"), StateSpace(2, 1), 0.01)
    assert rep["varrho"] == rho
    assert rep["tv_to_p1"] <= rho + 3 * rep["mc_error"]


def test_sample_partition_reduces_expected_steps(tmp_path):
    cfg = write_config(tmp_path, tau=0.02, target="point:0", n_trajectories=2000)
    assert run("sample", "--config", cfg, "--out", tmp_path, "--model", "oracle") == 0
    rep = read_json(tmp_path / "sample_report.json")["sample"]
    assert rep["expected_steps"] < rep["expected_steps_single_interval"]
    assert rep["poisson_draws"] > 0


def test_sample_thread_count_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path, n_trajectories=120_000)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("sample", "--config", cfg, "--out", a, "--model", "oracle") == 0
    assert run("sample", "--config", cfg, "--out", b, "--model", "oracle", "--threads", 3) == 0
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    assert (a / "sample_report.json").read_bytes() == (b / "sample_report.json").read_bytes()


# -- sweep and bounds -------------------------------------------------------------------

def test_sweep_tau_varrho_monotone(tmp_path):
    cfg = write_config(tmp_path, target=[0.4, 0.3, 0.2, 0.1], n_samples=500,
                       sweep={"taus": [0.3, 0.1, 0.03], "seeds": [0, 1]})
    assert run("sweep", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    rho = [float(r["varrho"]) for r in rows]
    assert rho[0] > rho[1] > rho[2]
    assert read_json(tmp_path / "sweep.json")["schema_version"] == 1


def test_sweep_n_exact_tv_medians_non_increasing(tmp_path):
    cfg = write_config(tmp_path, tau=0.05, target=[0.4, 0.3, 0.2, 0.1],
                       sweep={"ns": [100, 1000, 10000], "seeds": list(range(20))})
    assert run("sweep", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    tv = [float(r["exact_tv"]) for r in rows]
    assert tv[0] >= tv[1] >= tv[2]


def test_empty_sweep_is_config_error(tmp_path):
    assert run("sweep", "--config", write_config(tmp_path), "--out", tmp_path) == 2
    assert run("sweep", "--config", write_config(tmp_path, sweep={"taus": []}), "--out", tmp_path) == 2


def test_bounds_command(tmp_path):
    cfg = write_config(tmp_path, tau=0.05, target=[0.4, 0.3, 0.2, 0.1])
    assert run("bounds", "--config", cfg, "--out", tmp_path) == 0
    rep = read_json(tmp_path / "bounds.json")
    assert rep["bounds"]["holds"] is True
    assert rep["bounds"]["exact_tv"] <= rep["bounds"]["assembled"]
    assert rep["k1"] > 0 and rep["m_bar_c"] >= rep["m_under_c"] > 0


def test_every_output_embeds_config_and_schema(tmp_path):
    cfg = write_config(tmp_path, n_samples=300, n_trajectories=500, sweep={"seeds": [0]})
    for cmd in ("train", "sample", "sweep", "bounds"):
        assert run(cmd, "--config", cfg, "--out", tmp_path) in (0, 1)
    expected = load_config(cfg).to_json()
    for name in ("model.json", "loss_report.json", "sample_report.json", "sweep.json", "bounds.json"):
        obj = read_json(tmp_path / name)
        assert obj["config"] == expected, name
        assert obj["schema_version"] == 1, name


def test_console_script(tmp_path):
    exe = shutil.which("discrete-flow")
    cmd = [exe] if exe else [sys.executable, "-m", "discrete_flow.cli"]
    res = subprocess.run(cmd + ["train", "--config", str(DEFAULT), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "model.json").exists()
