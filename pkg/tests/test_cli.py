"""Tests for the config grammar, command driver, and artifact determinism."""
import hashlib
import json
import math

import numpy as np
import pytest

from geowave.cli import ExperimentConfig, load_config, run_command
from geowave.errors import ConfigInvalid

_SMALL = """
manifold.kind = "circle"
grid.points = 96
time.horizon = 0.5          # keep the runs short
"""


def _config(tmp_path, body, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(body)
    return path


def test_defaults_from_empty_config(tmp_path):
    cfg = load_config(_config(tmp_path, "# nothing but a comment\n"), "verify")
    assert cfg == ExperimentConfig()
    assert cfg.manifold_kind == "sphere"
    assert cfg.points == 1536
    assert cfg.atoms == ((0.0, 0.5), (1.0, 0.3), (2.5, 0.2))
    assert cfg.renormalize is True


def test_values_comments_and_booleans(tmp_path):
    body = """
    manifold.kind = "circle"   # inline comment
    grid.points = 128
    noise.atoms = ((0.0, 1.0),)
    solver.renormalize = FALSE
    experiment.eps = 1e-3
    """
    cfg = load_config(_config(tmp_path, body), "simulate")
    assert cfg.manifold_kind == "circle"
    assert cfg.points == 128
    assert cfg.atoms == ((0.0, 1.0),)
    assert cfg.renormalize is False
    assert cfg.experiment["eps"] == 1e-3


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigInvalid, match="grid.mesh"):
        load_config(_config(tmp_path, "grid.mesh = 7\n"), "verify")
    with pytest.raises(ConfigInvalid, match="experiment.bogus.*skeleton"):
        load_config(_config(tmp_path, "experiment.bogus = 1\n"), "skeleton")


def test_parse_errors_carry_line_numbers(tmp_path):
    with pytest.raises(ConfigInvalid, match="line 2"):
        load_config(_config(tmp_path, "\ngrid.points\n"), "verify")
    with pytest.raises(ConfigInvalid, match="duplicate key"):
        load_config(_config(tmp_path, "grid.points = 64\ngrid.points = 96\n"), "verify")
    with pytest.raises(ConfigInvalid, match="not a literal"):
        load_config(_config(tmp_path, "manifold.kind = circle\n"), "verify")
    with pytest.raises(ConfigInvalid, match="malformed key"):
        load_config(_config(tmp_path, "grid.points.extra = 1\n"), "verify")


def test_invariants_rejected_at_load(tmp_path):
    with pytest.raises(ConfigInvalid, match="grid.points"):
        load_config(_config(tmp_path, "grid.points = 32\n"), "verify")
    with pytest.raises(ConfigInvalid, match="time.horizon"):
        load_config(_config(tmp_path, "time.horizon = 6.0\n"), "verify")
    with pytest.raises(ConfigInvalid, match="manifold.kind"):
        load_config(_config(tmp_path, 'manifold.kind = "torus"\n'), "verify")
    with pytest.raises(ConfigInvalid, match="noise.atoms"):
        load_config(_config(tmp_path, "noise.atoms = ()\n"), "simulate")
    with pytest.raises(ConfigInvalid, match="noise.atoms"):
        load_config(_config(tmp_path, "noise.atoms = 5\n"), "verify")


def test_seed_override(tmp_path):
    path = _config(tmp_path, "noise.seed = 3\n")
    assert load_config(path, "verify").seed == 3
    assert load_config(path, "verify", seed_override=11).seed == 11


def test_driver_rejects_bad_invocations(tmp_path):
    cfg = _config(tmp_path, _SMALL)
    assert run_command(["skeleton", "--config", str(tmp_path / "missing.cfg"),
                        "--out", str(tmp_path / "o")]) == 2
    assert run_command(["skeleton", "--config", str(cfg),
                        "--out", str(tmp_path / "o"), "--threads", "0"]) == 2
    bad = _config(tmp_path, "grid.points = 8\n", name="bad.cfg")
    assert run_command(["skeleton", "--config", str(bad),
                        "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        run_command(["meditate", "--config", str(cfg), "--out", str(tmp_path / "o")])


def _seventeen_roundtrip(s):
    return isinstance(s, str) and format(float(s), ".17g") == s


def test_skeleton_artifacts(tmp_path):
    cfg = _config(tmp_path, _SMALL + 'experiment.initial = "rotating_geodesic"\n')
    out = tmp_path / "skel"
    assert run_command(["skeleton", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x,u_1,u_2,v_1,v_2,constraint_residual"
    report = json.loads((out / "skeleton.json").read_text())
    assert float(report["max_constraint_residual"]) < 1e-9
    assert report["energy_violations"] == 0
    assert _seventeen_roundtrip(report["final_time"])
    energy_lines = (out / "energy_report.csv").read_text().splitlines()
    assert energy_lines[0] == "t,e,bound,gap"
    assert len(energy_lines) == 2 + round(0.5 * 96 / 6)  # header + steps + 1

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema"] == "geowave.manifest/1"
    assert manifest["command"] == "skeleton"
    assert manifest["config_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert manifest["artifacts"] == sorted(
        ["trajectory.csv", "energy_report.csv", "skeleton.json", "manifest.json"])


def test_simulate_is_deterministic_across_threads_and_runs(tmp_path):
    cfg = _config(tmp_path, _SMALL + "experiment.trials = 6\nexperiment.eps = 1e-2\n")
    outs = []
    for name, threads in (("a", "1"), ("b", "3"), ("c", "1")):
        out = tmp_path / name
        assert run_command(["simulate", "--config", str(cfg), "--out", str(out),
                            "--threads", threads]) == 0
        outs.append(out)
    bytes_a = (outs[0] / "trials.csv").read_bytes()
    assert bytes_a == (outs[1] / "trials.csv").read_bytes()
    assert bytes_a == (outs[2] / "trials.csv").read_bytes()
    assert (outs[0] / "simulate.json").read_bytes() == (outs[1] / "simulate.json").read_bytes()
    # manifests agree except for the wall clock
    ma = json.loads((outs[0] / "manifest.json").read_text())
    mc = json.loads((outs[2] / "manifest.json").read_text())
    ma.pop("wall_time_s"), mc.pop("wall_time_s")
    assert ma == mc

    seeded = tmp_path / "d"
    assert run_command(["simulate", "--config", str(cfg), "--out", str(seeded),
                        "--seed", "5"]) == 0
    assert (seeded / "trials.csv").read_bytes() != bytes_a
    assert json.loads((seeded / "manifest.json").read_text())["seed"] == 5


def test_rate_of_uncontrolled_target_is_free(tmp_path):
    cfg = _config(tmp_path, _SMALL + 'experiment.target = "uncontrolled"\n'
                  'experiment.initial = "bump"\nexperiment.blocks = 4\n')
    out = tmp_path / "rate"
    assert run_command(["rate", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "rate.json").read_text())
    assert report["converged"] is True
    assert report["iterations"] == 0
    assert float(report["value"]) == 0.0
    blocks = (out / "control_blocks.csv").read_text().splitlines()
    assert blocks[0].startswith("block,mode_0")
    assert len(blocks) == 5  # header + 4 blocks


def test_probe_s1_and_tail_artifacts(tmp_path):
    cfg = _config(tmp_path, 'manifold.kind = "circle"\ngrid.points = 192\n'
                  "time.horizon = 0.5\nexperiment.n_list = (2, 4, 8)\n"
                  'experiment.initial = "bump"\nexperiment.tol = 0.1\n')
    out = tmp_path / "s1"
    assert run_command(["probe-s1", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "probe_s1.csv").read_text().splitlines()
    assert rows[0] == "param,metric,stderr"
    assert len(rows) == 4
    report = json.loads((out / "probe_s1.json").read_text())
    assert report["passed"] is True

    tail_cfg = _config(tmp_path, _SMALL + "experiment.delta = 0.0\n"
                       "experiment.eps_list = (1e-3, 1e-2)\nexperiment.trials = 30\n"
                       'experiment.initial = "bump"\n', name="tail.cfg")
    tout = tmp_path / "tail"
    assert run_command(["tail", "--config", str(tail_cfg), "--out", str(tout)]) == 0
    report = json.loads((tout / "tail.json").read_text())
    assert [float(p) for p in report["eps_log_p"]] == [0.0, 0.0]


def test_verify_runs_all_invariant_groups(tmp_path, capsys):
    cfg = _config(tmp_path, "grid.points = 96\n")
    out = tmp_path / "verify"
    assert run_command(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert report["total"] >= 25
    assert report["passed"] == report["total"]
    lines = capsys.readouterr().out.splitlines()
    assert sum(1 for ln in lines if ln.startswith("PASS")) == report["total"]
