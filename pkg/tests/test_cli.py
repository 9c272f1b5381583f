import json
import subprocess
import sys

import pytest

from abreu.cli import main
from abreu.functionals import CurvatureSpec
from abreu.polytope import standard_simplex


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_balanced_a_prints_constant(capsys):
    assert main(["balanced-a", "--polytope", "simplex2"]) == 0
    assert json.loads(capsys.readouterr().out) == {"kind": "constant", "value": 6.0}


def test_balanced_a_from_file(tmp_path, capsys):
    path = tmp_path / "tri.json"
    path.write_text(json.dumps(standard_simplex().to_dict()))
    assert main(["balanced-a", "--polytope", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == 6.0


def test_solve_writes_artifacts(tmp_path):
    assert _run(tmp_path, "solve", "--polytope", "interval", "--h", "0.03125", "--seed", "2") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "converged"
    lines = (tmp_path / "sol.csv").read_text().splitlines()
    assert lines[0] == "xi_1,phi,u,det,residual"
    assert any(l.startswith("# status:") for l in lines)


def test_solve_stall_exit_code(tmp_path):
    code = _run(tmp_path, "solve", "--polytope", "interval", "--A", "0", "--h", "0.03125",
                "--max-iters", "2")
    assert code == 2
    assert json.loads((tmp_path / "report.json").read_text())["status"] != "converged"


def test_stability_inconclusive(tmp_path, capsys):
    assert _run(tmp_path, "stability", "--polytope", "interval", "--A", "const:3") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "inconclusive"
    assert json.loads((tmp_path / "stability.json").read_text()) == out


def test_stability_violated(tmp_path):
    well = CurvatureSpec(1, {(2,): 100.0, (1,): -100.0, (0,): 27.0 - 100.0 / 12})
    path = tmp_path / "A.json"
    path.write_text(json.dumps(well.to_dict()))
    assert _run(tmp_path, "stability", "--polytope", "interval", "--A", str(path)) == 3


def test_verify_square(tmp_path, capsys):
    code = _run(tmp_path, "verify", "--polytope", "square", "--h", "0.0625", "--directions", "4",
                "--offsets", "4")
    assert code == 0
    est = json.loads((tmp_path / "estimates.json").read_text())
    assert est["estimates"]["det_bound_ok"] is True
    assert est["stability"]["verdict"] == "stable-evidence"
    assert (tmp_path / "sol.csv").exists() and (tmp_path / "report.json").exists()


def test_dualize(tmp_path):
    assert _run(tmp_path, "dualize", "--polytope", "simplex2", "--h", "0.0625") == 0
    header = (tmp_path / "dual.csv").read_text().splitlines()[0]
    assert header == "xi_1,xi_2,x_1,x_2,f,det_hess_f"


@pytest.mark.parametrize("args", [
    ["solve", "--polytope", "missing.json"],
    ["solve", "--polytope", "square", "--A", "nonsense"],
    ["solve", "--polytope", "square", "--p0", "0.5"],
    ["solve", "--polytope", "square", "--h", "-1"],
    ["solve", "--polytope", "square", "--method", "flow"],
])
def test_input_errors_exit_one(tmp_path, args, capsys):
    try:
        code = _run(tmp_path, *args)
    except SystemExit as exc:
        code = exc.code
    assert code == 1
    assert capsys.readouterr().err


def test_bad_polytope_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"dim": 1,\n')
    assert _run(tmp_path, "solve", "--polytope", str(path)) == 1
    assert "bad.json" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "abreu", "balanced-a", "--polytope", "square"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["value"] == 4.0


def test_verbose_prints_history(tmp_path, capsys):
    assert _run(tmp_path, "solve", "--polytope", "interval", "--h", "0.0625", "-v") == 0
    assert "iteration 0:" in capsys.readouterr().err
