import json

import numpy as np
import pytest

from snlslab import cli
from snlslab.errors import UsageError


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


SIM_CFG = """
system.kind = rescaled
grid.d = 1
grid.n = 64
grid.L = 32
run.T = 0.02
run.dt = 0.001
run.cadence = 5
noise.bump_1.amplitude = 0.5
noise.bump_1.center = 1.0
noise.bump_1.width = 1.5
init.kind = gaussian
init.amplitude = 1.0
init.width = 2.0
"""


def test_parse_config_values_and_comments():
    cfg = cli.parse_config("a.b = 3   # int\nc = 0.5\nd = 1, 2.5\n\ne = text\nf = true\n")
    assert cfg == {"a.b": 3, "c": 0.5, "d": [1.0, 2.5], "e": "text", "f": True}
    with pytest.raises(UsageError):
        cli.parse_config("no equals sign")


def test_bump_keys_are_validated():
    with pytest.raises(UsageError):
        cli.simulation_config(cli.parse_config("grid.d = 1\nnoise.bump_1.amplitude = 1\n"))
    with pytest.raises(UsageError):
        cli.simulation_config(cli.parse_config("grid.d = 1\nnoise.bump_1.colour = 1\n"))
    with pytest.raises(UsageError):
        cli.simulation_config(cli.parse_config(
            "grid.d = 2\nnoise.bump_1.amplitude = 1\nnoise.bump_1.center = 0\nnoise.bump_1.width = 1\n"))


def test_simulate_writes_outputs(tmp_path):
    cfg = _write(tmp_path, SIM_CFG)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["stop_reason"] == "horizon" and meta["seed"] == 4
    obs = (tmp_path / "o" / "observables.csv").read_text().splitlines()
    assert obs[0].startswith("# snlslab observables v1")
    assert (tmp_path / "o" / "brownian.csv").read_text().startswith("# snlslab brownian v1 seed=4")
    assert (tmp_path / "o" / "final.ckpt").is_file()


def test_ensemble_of_one_matches_simulate(tmp_path):
    cfg = _write(tmp_path, SIM_CFG + "ensemble.size = 1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s"), "--seed", "9"]) == 0
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "e"), "--seed", "9"]) == 0
    a = (tmp_path / "s" / "observables.csv").read_bytes()
    b = (tmp_path / "e" / "traj_0000" / "observables.csv").read_bytes()
    assert a == b
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summary["size"] == 1 and summary["horizon"] == 1


def test_ensemble_seeds_are_consecutive(tmp_path):
    cfg = _write(tmp_path, SIM_CFG + "ensemble.size = 3\n")
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "e"), "--seed", "5",
                     "--jobs", "1"]) == 0
    rows = (tmp_path / "e" / "summary.csv").read_text().splitlines()[2:]
    assert [int(r.split(",")[1]) for r in rows] == [5, 6, 7]


def test_usage_errors_exit_two(tmp_path, capsys):
    bad_T = _write(tmp_path, SIM_CFG.replace("run.T = 0.02", "run.T = 0.0001"))
    assert cli.main(["simulate", "--config", str(bad_T), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["simulate", "--seed", "-1"]) == 2
    assert cli.main(["bogus"]) == 2
    assert "error" in capsys.readouterr().err


def test_gn_suite_without_profile_is_precondition_error(tmp_path):
    cfg = _write(tmp_path, "ground_state.file = nowhere.csv\n")
    assert cli.main(["verify", "--config", str(cfg), "--suite", "gn"]) == 2


def test_verify_default_suites_pass(capsys):
    assert cli.main(["verify"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert lines and all(l.startswith("PASS") for l in lines)


def test_ground_state_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, "grid.d = 2\ngrid.n = 32\ngrid.L = 20\nground_state.tol = 1e-10\n")
    for out in ("a", "b"):
        assert cli.main(["ground-state", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / "ground_state.csv").read_bytes()
    assert a == (tmp_path / "b" / "ground_state.csv").read_bytes()
    meta = json.loads((tmp_path / "a" / "ground_state.json").read_text())
    assert meta["status"] == "ok" and max(meta["residual"]) < 1e-10 and meta["mass"] > 0


def test_ground_state_budget_failure_exits_one(tmp_path):
    cfg = _write(tmp_path, "grid.d = 2\ngrid.n = 32\ngrid.L = 20\nground_state.tol = 1e-13\n"
                           "ground_state.init = gaussian\nground_state.max_iter = 2\n")
    assert cli.main(["ground-state", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 1
    meta = json.loads((tmp_path / "g" / "ground_state.json").read_text())
    assert meta["status"] == "failed" and np.isfinite(max(meta["residual"]))
