import json
import subprocess
import sys

import numpy as np
import pytest

from polya_efron.cli import parse_grid, run
from conftest import cauchy_tabulated


@pytest.fixture()
def specs(tmp_path):
    files = {
        "gauss.json": {"family": "gaussian", "params": {"mu": 0, "sigma": 1}},
        "exp1.json": {"family": "exponential", "params": {"rate": 1}},
        "unif.json": {"family": "uniform", "params": {"lo": 0, "hi": 1}},
        "pois.json": {"kind": "discrete", "family": "poisson", "params": {"lam": 3}},
        "phi_x.json": {"name": "identity_x"},
        "cubic.json": {"name": "cubic", "alpha": 1, "beta": 2},
        "cauchy_tab.json": cauchy_tabulated().to_json(),
    }
    for name, body in files.items():
        (tmp_path / name).write_text(json.dumps(body))
    return tmp_path


def call(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = run(argv + ["--no-timestamp", "-o", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_grid_parsing():
    np.testing.assert_array_equal(parse_grid("0.2:6:30"), np.linspace(0.2, 6.0, 30))
    for bad in ("1:2", "a:b:3", "2:1:5", "0:1:1"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_check_pf_gaussian(specs):
    code, rep = call(["check-pf", "--density", str(specs / "gauss.json"), "--n", "3",
                      "--tuples", "500", "--seed", "7"], specs)
    assert code == 0 and rep["result"]["passed"]
    assert rep["config"]["seed"] == 7 and rep["config"]["atol"] == 1e-8


def test_check_pf_cauchy_violation(specs):
    code, rep = call(["check-pf", "--density", str(specs / "cauchy_tab.json"), "--n", "2"],
                     specs)
    assert code == 1
    assert rep["result"]["counterexample"]["normalized_det"] < 0


def test_efron_exponential_curve(specs):
    code, rep = call(["efron", "--fx", str(specs / "exp1.json"), "--fy",
                      str(specs / "exp1.json"), "--phi", str(specs / "phi_x.json"),
                      "--grid", "0.2:6:30"], specs)
    assert code == 0
    got = [(p["s"], p["g"]) for p in rep["result"]["samples"]]
    assert max(abs(g - s / 2) for s, g in got) < 1e-10


def test_reports_are_byte_identical(specs):
    argv = ["efron", "--fx", str(specs / "exp1.json"), "--fy", str(specs / "exp1.json"),
            "--phi", str(specs / "phi_x.json"), "--grid", "0.5:4:8"]
    call(argv, specs, "a.json")
    call(argv, specs, "b.json")
    assert (specs / "a.json").read_bytes() == (specs / "b.json").read_bytes()


def test_defaults_embedded(specs):
    _, rep = call(["check-logconcave", "--density", str(specs / "pois.json")], specs)
    cfg = rep["config"]
    assert (cfg["tuples"], cfg["seed"], cfg["rtol"], cfg["mass_floor"]) == \
        (1000, 1, 1e-10, 1e-12)
    assert "timestamp" not in rep


def test_unknown_family_exit_2(specs, capsys):
    bad = specs / "bad.json"
    bad.write_text(json.dumps({"family": "cauchy"}))
    assert run(["check-pf", "--density", str(bad)]) == 2
    assert "valid: gaussian" in capsys.readouterr().err


def test_unknown_phi_exit_2(specs, capsys):
    code = run(["efron", "--fx", str(specs / "gauss.json"), "--fy", str(specs / "gauss.json"),
                "--phi", '{"name": "nope"}', "--grid", "0:1:3"])
    assert code == 2 and "valid: identity_x" in capsys.readouterr().err


def test_refusal_exit_1_with_witness(specs):
    code, rep = call(["tilt", "--fx", str(specs / "unif.json"), "--fy", str(specs / "unif.json"),
                      "--phi", str(specs / "cubic.json"), "--a", "1.5",
                      "--grid", "0.05:1.95:10"], specs)
    assert code == 1
    assert rep["result"]["refused"] and rep["result"]["witness"]["variable"] == "x"


def test_tilt_pass(specs):
    code, rep = call(["tilt", "--fx", str(specs / "unif.json"), "--fy", str(specs / "unif.json"),
                      "--phi", str(specs / "cubic.json"), "--a", "1",
                      "--grid", "0.05:1.95:10"], specs)
    assert code == 0 and rep["result"]["hypotheses"]["tilt_cond1"]


def test_discrete_efron_needs_integer_grid(specs):
    argv = ["efron", "--fx", str(specs / "pois.json"), "--fy", str(specs / "pois.json"),
            "--phi", str(specs / "phi_x.json")]
    assert run(argv + ["--grid", "0:1:4", "--no-timestamp", "-o", str(specs / "x")]) == 2
    code, rep = call(argv + ["--grid", "0:40:41"], specs)
    assert code == 0 and rep["result"]["max_violation"] == 0.0


def test_curve_csv(specs):
    out = specs / "curve.csv"
    code = run(["curve", "--fx", str(specs / "unif.json"), "--fy", str(specs / "unif.json"),
                "--phi", str(specs / "phi_x.json"), "--grid", "0.5:2.5:5", "--format", "csv",
                "-o", str(out)])
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "s,phi,mass,err,skipped"
    assert lines[-1].startswith("2.5,,") and lines[-1].endswith(",1")


def test_csv_only_for_curves(specs):
    assert run(["check-logconcave", "--density", str(specs / "gauss.json"),
                "--format", "csv"]) == 2


def test_other_commands(specs):
    g, e = str(specs / "gauss.json"), str(specs / "exp1.json")
    assert call(["check-gm", "--functions", "one,identity,square", "--tuples", "50"],
                specs)[0] == 0
    assert call(["gm-preserve", "--fx", g, "--fy", g, "--functions", "one,identity",
                 "--tuples", "5", "--pf-tuples", "50"], specs)[0] == 0
    assert call(["alpha", "--fx", e, "--fy", e, "--phi", '{"name": "product"}',
                 "--alpha", "reciprocal", "--grid", "0.2:6:10"], specs)[0] == 0
    assert call(["product-over-s", "--fx", e, "--fy", e, "--grid", "0.2:6:10"], specs)[0] == 0
    assert call(["product-over-s", "--fx", g, "--fy", g, "--grid", "0.2:6:10"], specs)[0] == 1
    assert call(["conv-stability", "--fx", e, "--fy", e, "--tuples", "100"], specs)[0] == 0
    assert call(["conv-stability", "--fx", e, "--fy", e, "--grid", "0:3:31"], specs)[0] == 1
    assert call(["andreief", "--n", "2"], specs)[0] == 0


def test_module_entry_point(specs):
    proc = subprocess.run([sys.executable, "-m", "polya_efron", "check-logconcave",
                           "--density", str(specs / "gauss.json"), "--no-timestamp"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["passed"]
