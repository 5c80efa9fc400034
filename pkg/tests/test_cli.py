from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from mfglab.cli import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    git_blob_hash,
    load_config,
    main,
    resolve_threads,
    shipped_configs,
)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def only_run(root: Path, command: str) -> Path:
    dirs = list((root / command).iterdir())
    assert len(dirs) == 1
    return dirs[0]


def test_shipped_configs_validate():
    names = shipped_configs()
    assert {"free", "congestion", "smoke-2d"} <= set(names)
    for name in names:
        cfg, raw = load_config(name)
        assert raw and cfg.build_grid(cfg.build_model()).n == cfg.grid.n


def test_overrides_and_errors(tmp_path):
    cfg, _ = load_config("congestion", ["--solver.tol=1e-9", "--sim.N=[10,20]", "--model.params.c=0.5"])
    assert cfg.solver.tol == 1e-9 and cfg.sim.N == [10, 20] and cfg.build_model().params["c"] == 0.5
    with pytest.raises(ConfigError, match="not found"):
        load_config("no-such-config")
    with pytest.raises(ConfigError, match="bad override"):
        load_config("free", ["solver.tol=1"])
    with pytest.raises(ConfigError, match="power of two"):
        load_config("free", ["--grid.n=100"])
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [1, 2")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(str(bad))


def test_default_half_width_follows_domain_rule():
    cfg, _ = load_config(None, ["--grid.n=256"])
    m = cfg.build_model()
    assert cfg.build_grid(m).half_width >= m.suggested_half_width(1.0)


def test_solve_free(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "free", "--grid.n=256", f"--output={tmp_path}")
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["iterations"] <= 2 and summary["converged"]
    d = only_run(tmp_path, "solve")
    assert {"u.mfgf", "p.mfgf", "alpha_1.mfgf", "summary.json", "manifest.json"} <= {p.name for p in d.iterdir()}
    man = json.loads((d / "manifest.json").read_text())
    assert man["input_blob"] == git_blob_hash(shipped_configs()["free"].read_bytes())
    assert man["backend"] in ("cython", "numpy") and len(man["config_hash"]) == 64


def test_solve_congestion_reports_cross_checks(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "congestion", "--grid.n=256", f"--output={tmp_path}")
    s = json.loads(out)
    assert code == EXIT_OK
    assert s["hopf_cole"]["max_abs_u_difference"] < 1e-3
    assert s["hopf_cole"]["min_w"] >= s["hopf_cole"]["w_floor"] - 1e-6


def test_beta_out_of_range_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "free", "--model.beta=0.7", f"--output={tmp_path}")
    assert code == EXIT_CONFIG
    e = json.loads(err)
    assert e["error"] == "config" and "(H3) requires beta in (0, 1/2)" in e["message"]


def test_unknown_key_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "free", "--solver.speed=3", f"--output={tmp_path}")
    assert code == EXIT_CONFIG and "speed" in json.loads(err)["message"]


def test_numerical_failure_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "free", "--solver.max_iter=1", "--solver.tol=1e-300",
                       "--model.name=congestion", f"--output={tmp_path}")
    assert code == EXIT_NUMERIC and json.loads(err)["error"] == "numerical"


def test_forward_constant(tmp_path, capsys):
    code, out, _ = run(capsys, "forward", "free", "--grid.n=256", "--forward.alpha=constant",
                       "--forward.value=0.5", f"--output={tmp_path}")
    assert code == EXIT_OK and json.loads(out)["converged"]


def test_simulate(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "congestion", "--sim.N=[50,100]", "--sim.M_sim=50",
                       f"--output={tmp_path}")
    assert code == EXIT_OK
    runs = json.loads(out)["runs"]
    assert [r["N"] for r in runs] == [50, 100] and all(r["max_mass_error"] < 1e-12 for r in runs)
    assert (only_run(tmp_path, "simulate") / "traj-N100.mfgt").exists()


def test_converge_deterministic_across_threads(tmp_path, capsys):
    csvs = []
    for t in (1, 3):
        code, _, _ = run(capsys, "converge", "congestion", "--sim.N=[50,100]", "--sim.seeds=2", "--sim.M_sim=50",
                         f"--threads={t}", f"--output={tmp_path / str(t)}")
        assert code == EXIT_OK
        csvs.append((only_run(tmp_path / str(t), "converge") / "report.csv").read_bytes())
    assert csvs[0] == csvs[1]


def test_nashgap_small(tmp_path, capsys):
    code, out, _ = run(capsys, "nashgap", "congestion", "--grid.n=256", "--study.nash_N=[20,40]",
                       "--study.nash_seeds=1", "--study.nash_R=2", "--study.nash_steps=10",
                       "--study.cv_paths=1000", f"--output={tmp_path}")
    assert code == EXIT_OK
    assert json.loads(out)["label"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("MFG_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.setenv("MFG_THREADS", "x")
    with pytest.raises(ConfigError):
        resolve_threads(None)


def test_selftest_entry_point():
    res = subprocess.run([sys.executable, "-m", "mfglab.cli", "selftest"], capture_output=True, text=True)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "selftest passed" in res.stdout and "FAIL" not in res.stdout
