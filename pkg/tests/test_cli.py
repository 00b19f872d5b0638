import json
import shutil
from fractions import Fraction

import numpy as np
import pytest

from skorokhod_lab import cli
from skorokhod_lab.oracle import assemble_lp, solve_lp_exact

LOBE = {
    "grid": {"x_min": 0, "x_max": 12, "n_interior": 11, "ratio": 1, "horizon_steps": 40},
    "mu": {"kind": "table", "values": [0, 0, 0, 0, 1, 2, 1, 0, 0, 0, 0]},
    "nu": {"kind": "sine_profile", "period": 12},
    "lagrangian": {"kind": "increasing", "a": 1, "b": 1},
    "simulation": {"n_paths": 20000, "seed": 5},
}


def write(tmp_path, d, name="run"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(d))
    return p


def test_tiny_preset_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "tiny"
    assert cli.main(["preset", "tiny3", "--out", str(out)]) == cli.EXIT_OK
    for name in ("eta.csv", "rho.csv", "J.csv", "U.csv", "psi.csv", "barrier.csv",
                 "montecarlo.csv", "report.json", "timings.json"):
        assert (out / name).exists(), name
    eta = (out / "eta.csv").read_text().splitlines()
    assert eta[0] == "k,t,i,x,value" and len(eta) == 1 + 2 * 3
    assert eta[2] == "0,0,1,2,1"
    bar = (out / "barrier.csv").read_text().splitlines()
    assert bar[0] == "node,x,s_index,t_s,t0_mass,edge_fraction,tail_index"
    assert bar[1].split(",")[2] == "1"
    rep = json.loads((out / "report.json").read_text())
    assert rep["solve"]["primal_cost"] == pytest.approx(1.0)
    assert rep["barrier"]["direction"] == "forward"
    assert "cost 1" in capsys.readouterr().out


def test_verify_tiny_passes(tmp_path, capsys):
    cfg = tmp_path / "tiny3.json"
    assert cli.main(["preset", "tiny3", "--write-config", str(cfg)]) == 0
    table = tmp_path / "table.json"
    assert cli.main(["verify", str(cfg), "--json", str(table)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "FAIL" not in text
    rows = json.loads(table.read_text())
    names = {r["check"] for r in rows}
    assert {"oracle_equivalence", "golden", "slackness", "monotonicity"} <= names
    assert all(r["passed"] for r in rows)


def test_corrupted_golden_fails_by_name(tmp_path, capsys):
    root = tmp_path / "golden"
    shutil.copytree(cli.GOLDEN_DIR, root)
    p = root / "tiny3" / "eta.csv"
    p.write_text(p.read_text().replace("1.00000000000000000000", "1.00000000000000000001"))
    cfg = tmp_path / "tiny3.json"
    cli.main(["preset", "tiny3", "--write-config", str(cfg)])
    code = cli.main(["verify", str(cfg), "--golden", str(root)])
    assert code != 0 and code == cli.EXIT_FAILED
    fails = [ln for ln in capsys.readouterr().out.splitlines() if "FAIL" in ln]
    assert len(fails) == 1 and fails[0].startswith("golden") and "eta.csv" in fails[0]


def test_golden_files_match_the_oracle():
    cfg = cli.preset_config("tiny3")
    grid, mu, nu, L = cfg.build()
    ex = solve_lp_exact(assemble_lp(grid, mu, nu, L))
    assert cli.compare_golden(cli.golden_tables(grid, ex), cli.GOLDEN_DIR / "tiny3") == []


def test_fixed_decimal():
    assert cli.fixed_decimal(Fraction(1, 3)) == "0.33333333333333333333"
    assert cli.fixed_decimal(Fraction(-3)) == "-3.00000000000000000000"
    assert cli.fixed_decimal(Fraction(1, 8), 3) == "0.125"


@pytest.mark.parametrize("bad", [
    {"grid": {"x_min": 0, "x_max": 4, "n_interior": 3, "ratio": 2, "horizon_steps": 2}},
    {"nu": {"kind": "rainbow"}},
    {"lagrangian": {"kind": "decreasing", "a": 1, "b": -1}},
    {"solver": {"max_iters": 4}},
    {"colour": "blue"},
])
def test_config_errors_exit_1(tmp_path, bad, capsys):
    d = {**cli.PRESETS["tiny3"], **bad}
    assert cli.main(["solve", str(write(tmp_path, d)), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_unreadable_config_exit_1(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["solve", str(p)]) == cli.EXIT_CONFIG
    assert cli.main(["solve", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_infeasible_exit_2_prints_witness(tmp_path, capsys):
    d = {**cli.PRESETS["tiny3"], "mu": {"kind": "point", "index": 1}}
    assert cli.main(["solve", str(write(tmp_path, d)), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "infeasible" in err and "witness" in err and "Farkas" in err
    assert not (tmp_path / "o").exists()
    assert cli.main(["verify", str(write(tmp_path, d, "v"))]) == cli.EXIT_INFEASIBLE


def test_unconverged_run_exit_3(tmp_path):
    d = {**LOBE, "solver": {"max_iter": 1, "warm_start": 1}}
    assert cli.main(["solve", str(write(tmp_path, d)), "--out", str(tmp_path / "o"),
                     "--no-simulate"]) == cli.EXIT_FAILED
    assert (tmp_path / "o" / "report.json").exists()


def test_output_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["solve", str(write(tmp_path, cli.PRESETS["tiny3"], "small")),
                     "--no-simulate"]) == 0
    assert (tmp_path / "env" / "small" / "eta.csv").exists()
    assert not (tmp_path / "env" / "small" / "montecarlo.csv").exists()


def test_simulate_overrides(tmp_path):
    p = write(tmp_path, cli.PRESETS["tiny3"])
    out = tmp_path / "o"
    assert cli.main(["simulate", str(p), "--paths", "1000", "--seed", "9", "--out", str(out)]) == 0
    mc = json.loads((out / "report.json").read_text())["montecarlo"]
    assert mc["n_paths"] == 1000 and mc["seed"] == 9


def test_oscillating_run_makes_no_barrier_claim(tmp_path):
    d = {**LOBE, "lagrangian": {"kind": "oscillating", "a": 1, "time_scale": 40}}
    out = tmp_path / "o"
    assert cli.main(["solve", str(write(tmp_path, d)), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert "barrier" not in rep and "coincidence" in rep
    assert not (out / "barrier.csv").exists()
    assert rep["solve"]["gap"] <= 1e-10 * max(1.0, rep["solve"]["primal_cost"])


def test_artifacts_do_not_depend_on_threads(tmp_path):
    p = write(tmp_path, LOBE)
    dirs = []
    for t in (1, 2, 8):
        d = tmp_path / f"t{t}"
        assert cli.main(["simulate", str(p), "--threads", str(t), "--out", str(d)]) == 0
        dirs.append(d)
    names = sorted(f.name for f in dirs[0].iterdir() if f.name != "timings.json")
    for d in dirs[1:]:
        for n in names:
            assert (d / n).read_bytes() == (dirs[0] / n).read_bytes(), n


def test_refined_config():
    cfg = cli.refined(cli.preset_config("figure1-increasing"))
    assert cfg.grid["n_interior"] == 79 and cfg.grid["horizon_steps"] == 1600
    grid, *_ = cfg.build()
    assert grid.dx == 0.5 and grid.dt == 0.25
    assert cfg.name == "figure1-increasing-refined1"


def test_presets_build():
    for name in cli.PRESETS:
        grid, mu, nu, L = cli.preset_config(name).build()
        assert mu.mass == pytest.approx(1) and nu.mass == pytest.approx(1)
    with pytest.raises(cli.ConfigError):
        cli.preset_config("figure3")


def test_report_fields(tmp_path):
    out = cli.solve_config(cli.preset_config("tiny3"), simulate=False)
    s = out.report["solve"]
    for k in ("primal_cost", "dual_value", "gap", "target_residual", "slackness_residual",
              "iterations", "killed_mass", "horizon_tail_mass"):
        assert k in s
    assert "solve" in out.timings
    assert np.isfinite(s["gap"])


def test_stationary_verify_skips_transport(tmp_path, capsys):
    d = {**LOBE, "lagrangian": {"kind": "stationary", "values": [1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1]},
         "nu": {"kind": "table", "values": [1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1]},
         "grid": {**LOBE["grid"], "horizon_steps": 20}}
    assert cli.main(["verify", str(write(tmp_path, d))]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "barrier_coincidence" in text and "barrier_embedding" not in text
    assert "oracle_equivalence   PASS" in text
