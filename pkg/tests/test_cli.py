import json
import subprocess
import sys

import numpy as np
import pytest

from anglerig import simulation as S
from anglerig.cli import main

SCENARIO_A_HEADER = ("t,lambda8,lambda8_weighted,aim_deg_1,aim_deg_2,aim_deg_3,aim_deg_4,aim_deg_5,"
                     "loc_err_1,loc_err_2,loc_err_3,loc_err_4,loc_err_5,n_edges,flags")


def short_scenario(tmp_path, t_end=0.2, name="scenario_a"):
    data = json.loads(S.bundled_config(name).read_text())
    data["integrator"]["t_end"] = t_end
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


# -- run ---------------------------------------------------------------------------

def test_run_writes_outputs_with_golden_header(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(short_scenario(tmp_path)), "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == SCENARIO_A_HEADER
    assert len(lines) == 22
    assert len(lines[1].split(",")) == len(SCENARIO_A_HEADER.split(","))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aborted"] is False and summary["seed"] == 1
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["n_robots"] == 5


def test_run_seed_override_and_resolved_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(short_scenario(tmp_path)), "--out", str(a), "--seed", "4"]) == 0
    assert json.loads((a / "summary.json").read_text())["seed"] == 4
    assert main(["run", "--config", str(a / "config.resolved.json"), "--out", str(b)]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_run_config_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    bad = write(tmp_path, "bad.json", {"d": 3})
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "n_robots" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path / "o")]) == 1


def test_run_abort_exits_two(tmp_path, monkeypatch):
    class Converge:
        def __init__(self, cfg):
            self.flags = {"gap_warning": False, "clamped": False}
            self.rig = S.ctl.RigidityController(cfg.camera, cfg.weights)

        def targets_at(self, t):
            return None

        def __call__(self, p, R, t):
            u = 2.0 * (p.mean(axis=0) - p)
            return np.einsum("iba,ib->ia", R, u), np.zeros((p.shape[0], 1))

    monkeypatch.setattr(S, "ControlField", Converge)
    cfg = write(tmp_path, "c.json", {"n_robots": 2, "d": 2, "placement": {"center": [0, 0], "side": 4.0},
                                     "controls": {"mission": False}, "localization": {"enabled": False},
                                     "integrator": {"dt": 0.01, "t_end": 20.0}})
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aborted"] and summary["abort"]["reason"] == "collision"


# -- check ---------------------------------------------------------------------------

def test_check_examples(tmp_path, capsys):
    k4 = {"d": 2, "positions": [[0, 0], [1.3, 0.1], [0.4, 1.1], [1.5, 1.7]],
          "edges": [[i, j] for i in range(1, 5) for j in range(1, 5) if i != j]}
    assert main(["check", "--framework", str(write(tmp_path, "k4.json", k4))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["is_iar"] and "is_ibr" not in rep and rep["eigen_index"] == 5

    col = {"d": 2, "positions": [[0, 0], [1, 0], [2, 0]], "edges": [[1, 2], [1, 3]]}
    assert main(["check", "--framework", str(write(tmp_path, "col.json", col))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert not rep["is_iar"] and rep["is_degenerate"]

    k4["rotations"] = [np.eye(2).tolist()] * 4
    assert main(["check", "--framework", str(write(tmp_path, "k4r.json", k4))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["is_ibr"] is True


def test_check_parse_errors(tmp_path, capsys):
    assert main(["check", "--framework", str(tmp_path / "missing.json")]) == 1
    bad = write(tmp_path, "bad.json", {"d": 2, "positions": [[0, 0], [1, 0]], "edges": [[0, 1]]})
    assert main(["check", "--framework", str(bad)]) == 1
    assert "outside" in capsys.readouterr().err


# -- gradcheck and theorem1 ---------------------------------------------------------------

def test_gradcheck_passes_and_is_deterministic(capsys):
    assert main(["gradcheck", "--trials", "4", "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["gradcheck", "--trials", "4", "--seed", "3"]) == 0
    assert capsys.readouterr().out == first
    assert first.count("PASS") == 8


def test_gradcheck_fault_injection_fails(capsys):
    assert main(["gradcheck", "--trials", "2", "--inject-fault", "collision_gradient"]) == 1
    out = capsys.readouterr().out
    assert "FAIL collision_gradient" in out


def test_gradcheck_rejects_zero_trials():
    assert main(["gradcheck", "--trials", "0"]) == 1


def test_theorem1_small_and_usage(capsys):
    assert main(["theorem1", "--d", "2", "--trials", "50"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["inconsistencies"] == 0 and sum(rep["counts"].values()) == 50
    assert main(["theorem1", "--d", "3", "--trials", "0"]) == 1
    with pytest.raises(SystemExit):
        main(["theorem1", "--d", "4"])


# -- localize ---------------------------------------------------------------------------

def test_localize_outputs(tmp_path, capsys):
    cfg = write(tmp_path, "loc.json", {"seed": 2, "t_end": 5.0, "dt": 0.01, "side": 10.0,
                                       "init_noise_std": 0.5})
    out = tmp_path / "o"
    assert main(["localize", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "error_trace.csv").read_text().splitlines()
    assert lines[0] == "t,error,err_1,err_2,err_3,err_4,err_5,graph"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["decay_rate"] < 0
    assert summary["final_error"] < summary["initial_error"]


def test_localize_zero_noise_is_flat(tmp_path):
    cfg = write(tmp_path, "loc.json", {"t_end": 2.0, "init_noise_std": 0.0})
    out = tmp_path / "o"
    assert main(["localize", "--config", str(cfg), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["initial_error"] < 1e-12 and s["final_error"] < 1e-9


def test_localize_initial_error_matches_noise_level(tmp_path):
    # aligned error of N iid isotropic 2 m offsets in 3-D: about sqrt((N - 2) * 3) * 2 m
    errs = []
    for seed in range(20):
        cfg = write(tmp_path, "loc.json", {"seed": seed, "t_end": 0.01, "init_noise_std": 2.0})
        out = tmp_path / f"o{seed}"
        assert main(["localize", "--config", str(cfg), "--out", str(out)]) == 0
        errs.append(json.loads((out / "summary.json").read_text())["initial_error"])
    assert 2.0 < np.mean(errs) < 8.0


def test_localize_non_rigid_graph_warns(tmp_path, capsys):
    cfg = write(tmp_path, "loc.json", {"d": 2, "t_end": 0.5, "graphs": [[[1, 2], [1, 3], [2, 1], [2, 3]]]})
    assert main(["localize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "not infinitesimally angle rigid" in capsys.readouterr().err
    assert main(["localize", "--config", str(write(tmp_path, "b.json", {"bogus": 1})),
                 "--out", str(tmp_path / "o")]) == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "anglerig.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "check", "gradcheck", "theorem1", "localize"):
        assert cmd in out.stdout
