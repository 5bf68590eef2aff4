import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from bsbridge import io as bio
from bsbridge.cli import main
from bsbridge.scenario import ScenarioError, build_problem, load_scenario, parse_scenario

SOLVE_FILES = ("marginals.csv", "psi.csv", "pressure.csv", "residual.csv", "report.json")


def write_scenario(tmp_path, obj, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# --- solve --------------------------------------------------------------------------


def test_solve_trivial(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "trivial"})
    code, out, _ = run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)
    assert code == 0
    for f in SOLVE_FILES:
        assert (tmp_path / "o" / f).exists()
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    jsonschema.validate(report, bio.SOLVE_REPORT_SCHEMA)
    assert report["solve"]["entropy"] <= 1e-10
    assert "converged: true" in out


def test_solve_ou_gaussian(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "ou-gaussian-c", "c": 0.9})
    code, _, _ = run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)
    assert code == 0
    header, rows = bio.read_rows(tmp_path / "o" / "residual.csv")
    assert header == ["x0", "k", "z", "value"] and rows
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["solve"]["constraint_gap"] <= 1e-9
    d, c = report["entropy_check"]["direct"], report["entropy_check"]["chain_rule"]
    assert abs(d - c) <= 1e-10


def test_solve_every_csv_has_header(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "heat-uniform"})
    assert run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)[0] == 0
    for f in SOLVE_FILES[:-1]:
        header, rows = bio.read_rows(tmp_path / "o" / f)
        assert header[-1] == "value"
        assert all(len(r) == len(header) for r in rows)


def test_solve_infeasible_names_constraint(tmp_path, capsys):
    sc = write_scenario(tmp_path, {
        "preset": "trivial",
        "constraints": {"initial_law": "point", "endpoint_marginals": "stationary-gaussian",
                        "marginals": "stationary-gaussian", "coupling": "independent"},
    })
    code, _, err = run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert "endpoint" in err
    assert not (tmp_path / "o" / "report.json").exists()


def test_solve_nonconvergence_exit_two(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "ou-gaussian-c", "tolerances": {"max_iter": 2}})
    code, _, err = run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)
    assert code == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["solve"]["converged"] is False
    assert "converged: false" in err


@pytest.mark.parametrize("obj, field", [
    ("{\n  \"preset\": \"trivial\",\n  oops\n}", "line 3"),
    ({"preset": "nope"}, "preset"),
    ({"preset": "trivial", "K": 1}, "K"),
    ({"grid": {"n": 8, "length": 4}, "generator": {"name": "warp"}, "K": 3, "constraints": {}}, "generator.name"),
    ({"preset": "trivial", "constraints": {"marginals": [0.5, 0.5]}}, "constraints.marginals"),
    ({"preset": "heat-uniform", "constraints": {"coupling": "gaussian-coupling c=1.5"}}, "constraints.coupling"),
])
def test_solve_invalid_scenarios(tmp_path, capsys, obj, field):
    sc = write_scenario(tmp_path, obj)
    code, _, err = run(["solve", "--scenario", sc, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert field in err


def test_solve_missing_file(tmp_path, capsys):
    assert run(["solve", "--scenario", tmp_path / "absent.json"], capsys)[0] == 1


def test_solve_deterministic(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "ou-gaussian-c", "K": 4, "grid": {"n": 32}})
    for d in ("a", "b"):
        assert run(["solve", "--scenario", sc, "--out", tmp_path / d, "--seed", 3], capsys)[0] == 0
    for f in SOLVE_FILES:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_tol_flag_overrides(tmp_path, capsys):
    sc = write_scenario(tmp_path, {"preset": "ou-gaussian-c", "K": 4, "grid": {"n": 32}})
    run(["solve", "--scenario", sc, "--out", tmp_path / "a", "--tol", 1e-4], capsys)
    run(["solve", "--scenario", sc, "--out", tmp_path / "b", "--tol", 1e-12], capsys)
    ra = json.loads((tmp_path / "a" / "report.json").read_text())["solve"]
    rb = json.loads((tmp_path / "b" / "report.json").read_text())["solve"]
    assert ra["iterations"] < rb["iterations"]
    assert rb["constraint_gap"] <= 1e-12


# --- scenario parsing ----------------------------------------------------------------------


def test_preset_merge_and_c_shortcut():
    sc = parse_scenario({"preset": "ou-gaussian-c", "c": -0.5, "grid": {"n": 16}})
    assert sc.constraints["coupling"] == "gaussian-coupling c=-0.5"
    assert sc.grid == {"n": 16, "length": 12.0, "topology": "truncated"}


def test_explicit_laws(tmp_path):
    n = 4
    sc = parse_scenario({
        "grid": {"n": n, "length": 4.0, "topology": "periodic"},
        "generator": {"name": "poisson", "params": {"lambda": 0.5}},
        "K": 3,
        "constraints": {
            "initial_law": [0.25] * 4,
            "marginals": [[0.25] * 4, [0.1, 0.2, 0.3, 0.4]],
            "coupling": "independent",
            "endpoint_marginals": "uniform",
        },
    })
    pr = build_problem(sc)
    np.testing.assert_allclose(pr.constraints.marginals[1], [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(pr.constraints.endpoint_coupling, 1 / 16)


def test_gaussian_coupling_matches_marginals():
    pr = build_problem(parse_scenario({"preset": "ou-gaussian-c"}))
    pi = pr.constraints.endpoint_coupling
    mu = pr.chain.initial_law
    np.testing.assert_allclose(pi.sum(axis=1), mu, atol=1e-13)
    np.testing.assert_allclose(pi.sum(axis=0), mu, atol=1e-13)
    np.testing.assert_allclose(pi, pi.T, atol=1e-15)


def test_load_scenario_reports_line(tmp_path):
    p = write_scenario(tmp_path, '{\n "K": 3,\n}')
    with pytest.raises(ScenarioError) as ei:
        load_scenario(p)
    assert ei.value.field == "line 3"


# --- OU subcommands ----------------------------------------------------------------------


def test_ou_verify(capsys, tmp_path):
    code, out, _ = run(["ou-verify", "--rho", math.exp(-1), "--T", 1], capsys)
    assert code == 0 and "invariant: true" in out
    code, out, _ = run(["ou-verify", "--rho", math.exp(-1) + 0.05, "--T", 1, "--out", tmp_path], capsys)
    assert code == 0 and "invariant: false" in out
    assert json.loads((tmp_path / "ou_verify.json").read_text())["invariant"] is False


@pytest.mark.parametrize("argv", [["--rho", 1.5], ["--rho", 0.3, "--T", -1], ["--rho", 0.3, "--tol", 0]])
def test_ou_verify_invalid(capsys, argv):
    assert run(["ou-verify", *argv], capsys)[0] == 1


def test_certificate_cli(capsys, tmp_path):
    code, out, _ = run(["certificate", "--c", 0.9, "--out", tmp_path], capsys)
    assert code == 0 and out.rstrip().endswith("feasible: true")
    d = json.loads((tmp_path / "certificate.json").read_text())
    jsonschema.validate(d, bio.CERTIFICATE_SCHEMA)
    code, out, _ = run(["certificate", "--c", -0.9], capsys)
    assert code == 0 and out.rstrip().endswith("feasible: false")
    assert run(["certificate", "--c", "nan"], capsys)[0] == 1


def test_feasibility_cli(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("BSB_THREADS", "3")
    code, out, _ = run(["feasibility", "--step", 0.25, "--out", tmp_path / "a"], capsys)
    assert code == 0
    assert "infimal c: -0.678076167" in out
    header, rows = bio.read_rows(tmp_path / "a" / "feasibility.csv")
    assert header == ["r", "s", "c", "min_eigenvalue", "feasible"]
    assert len(rows) == 7 * 7
    for r, s, c, lam, feas in rows:
        assert (float(lam) > 0) == (feas == "true")
    monkeypatch.setenv("BSB_THREADS", "1")
    run(["feasibility", "--step", 0.25, "--out", tmp_path / "b"], capsys)
    assert (tmp_path / "a" / "feasibility.csv").read_bytes() == (tmp_path / "b" / "feasibility.csv").read_bytes()
    assert run(["feasibility", "--step", 0], capsys)[0] == 1
    assert run(["feasibility", "--r", 1.0], capsys)[0] == 1


def test_sample_bridge_cli(capsys, tmp_path):
    argv = ["sample-bridge", "--x", 1, "--y", -1, "--T", 2, "--n-times", 5, "--seed", 9]
    assert run([*argv, "--out", tmp_path / "a"], capsys)[0] == 0
    assert run([*argv, "--out", tmp_path / "b"], capsys)[0] == 0
    a = (tmp_path / "a" / "bridge.csv").read_bytes()
    assert a == (tmp_path / "b" / "bridge.csv").read_bytes()
    header, rows = bio.read_rows(tmp_path / "a" / "bridge.csv")
    assert header == ["t", "value"] and len(rows) == 5
    assert float(rows[0][1]) == 1.0 and float(rows[-1][1]) == -1.0
    assert run(["sample-bridge", "--x", 0, "--y", 0, "--times", "0.5,0.1", "--out", tmp_path], capsys)[0] == 1
    assert run(["sample-bridge", "--x", 0, "--y", 0, "--T", 0, "--out", tmp_path], capsys)[0] == 1


def test_selftest(capsys):
    code, out, _ = run(["selftest"], capsys)
    assert code == 0
    assert out.count("PASS") == 4


@pytest.mark.skipif(shutil.which("bsb") is None, reason="console script not installed")
def test_console_script(tmp_path):
    p = subprocess.run(["bsb", "certificate", "--c", "0.5"], capture_output=True, text=True, check=False)
    assert p.returncode == 0 and "feasible: true" in p.stdout


# --- shipped scenarios and scripts -------------------------------------------------------

ROOT = Path(__file__).resolve().parents[1]


@pytest.mark.parametrize("name, code", [("trivial", 0), ("ou_c09", 0), ("stable_uniform", 0),
                                        ("infeasible_point_start", 1)])
def test_shipped_scenarios(tmp_path, capsys, name, code):
    assert run(["solve", "--scenario", ROOT / "scenarios" / f"{name}.json", "--out", tmp_path], capsys)[0] == code


@pytest.mark.parametrize("argv", [
    ["stable_spectrum.py", "--alpha", "1.5", "--n", "64", "--length", "16"],
    ["feasibility_sweep.py", "--step", "0.25"],
])
def test_scripts_run(tmp_path, argv):
    out = tmp_path / ("s.csv" if argv[0].startswith("stable") else "o")
    p = subprocess.run([sys.executable, str(ROOT / "scripts" / argv[0]), *argv[1:], "--out", str(out)],
                       capture_output=True, text=True, check=False)
    assert p.returncode == 0, p.stderr
    assert "wrote" in p.stdout
