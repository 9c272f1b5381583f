import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.field_calculus import GridField, NotPositiveDefinite, Potential
from abreu.guillemin import GuilleminPotential
from abreu.polytope import interval, standard_simplex, unit_square
from abreu.solver import (SolveConfig, dump_json, extrapolation_rows, residual, smooth_random_field,
                          solve, write_solution_csv)


def _sine(x):
    return 0.01 * np.sin(np.pi * x[:, 0])


def _hessian_error(u):
    m = u.core_mask
    exact = GuilleminPotential(u.grid.poly).hessian(u.grid.coords[m])
    return np.max(np.abs(u.hessians[m] - exact) / np.abs(exact))


def test_guillemin_start_already_converged():
    u, rep = solve(interval(), 2, SolveConfig(h=1 / 64))
    assert rep.converged and rep.iterations == 0
    assert rep.sup_residual < 1e-8


def test_extrapolated_collar_recovers_guillemin():
    u, rep = solve(interval(), 2, SolveConfig(h=1 / 64), phi0=_sine)
    assert rep.converged and rep.iterations <= 5
    assert _hessian_error(u) < 1e-8
    hist = rep.residual_history
    assert all(b < a for a, b in zip(hist, hist[1:]))


def test_frozen_collar_keeps_boundary_layer():
    # the frozen collar pins the perturbation near the boundary, so the core
    # solution differs from v in the Hessian there by an amount that does not shrink with h
    u, rep = solve(interval(), 2, SolveConfig(h=1 / 64, collar="frozen"), phi0=_sine)
    assert rep.converged
    assert _hessian_error(u) > 1e-3
    assert "frozen" in rep.notes[0]


def test_square_random_start():
    g_probe = solve(unit_square(), 4, SolveConfig(h=1 / 32, max_iters=0))[0].grid
    phi0 = smooth_random_field(g_probe, 1e-3, seed=1)
    u, rep = solve(unit_square(), 4, SolveConfig(h=1 / 32), phi0=phi0.values)
    assert rep.converged and rep.sup_residual < 1e-6
    assert rep.det_range[0] > 0
    assert np.linalg.det(u.hessian([0.5, 0.5])) == pytest.approx(16.0, rel=1e-6)


def test_simplex_barycenter_det():
    u, rep = solve(standard_simplex(), 6, SolveConfig(h=1 / 32),
                   phi0=lambda x: 1e-3 * np.cos(2 * x[:, 0] - x[:, 1]))
    assert rep.converged
    assert np.linalg.det(u.hessian_at([1 / 3, 1 / 3])[0]) == pytest.approx(27.0, rel=1e-5)


def test_flow_decreases_monotonically():
    _, rep = solve(interval(), 2, SolveConfig(h=1 / 16, method="flow", collar="frozen", max_iters=5),
                   phi0=_sine)
    hist = rep.residual_history
    assert len(hist) >= 2
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert rep.tau_history["steps"] == len(hist) - 1


def test_bad_configuration():
    with pytest.raises(ValueError):
        solve(interval(), 2, SolveConfig(h=1 / 16, method="flow"))
    with pytest.raises(ValueError):
        solve(interval(), 2, SolveConfig(h=1 / 16, method="gauss"))
    with pytest.raises(ValueError):
        solve(interval(), 2, SolveConfig(h=1 / 16, collar="open"))


def test_nonconvex_start_rejected():
    with pytest.raises(NotPositiveDefinite):
        solve(interval(), 2, SolveConfig(h=1 / 16), phi0=lambda x: -10 * x[:, 0] ** 2)


def test_zero_curvature_initial_residual():
    # Op(v) = -2 on the interval, so with A = 0 the starting residual is 2
    _, rep = solve(interval(), 0, SolveConfig(h=1 / 32, max_iters=0))
    assert rep.status == "max-iterations"
    assert rep.residual_history[0] == pytest.approx(2.0, abs=1e-8)


def test_unbalanced_curvature_does_not_converge():
    _, rep = solve(interval(), 0, SolveConfig(h=1 / 32, max_iters=4))
    assert not rep.converged
    assert rep.status in ("stalled", "max-iterations")
    assert rep.residual_history[-1] <= rep.residual_history[0]


def test_residual_is_core_only():
    u = Potential.guillemin(solve(interval(), 2, SolveConfig(h=1 / 16, max_iters=0))[0].grid)
    r = residual(u, 2)
    assert np.array_equal(r.mask, u.core_mask)
    assert np.all(np.isnan(r.values[~r.mask]))


def test_extrapolation_rows_kill_quadratics():
    u, _ = solve(unit_square(), 4, SolveConfig(h=1 / 16, max_iters=0))
    g = u.grid
    unknowns = g.defined.copy()
    targets = unknowns & ~u.core_mask
    E = extrapolation_rows(g, targets, unknowns)
    q = 1 + g.coords[:, 0] - 3 * g.coords[:, 1] + g.coords[:, 0] * g.coords[:, 1] + g.coords[:, 1] ** 2
    assert np.max(np.abs(E @ q[unknowns])) < 1e-12
    assert np.max(np.abs(E @ (g.coords[unknowns, 0] ** 3))) > 1e-6


@settings(max_examples=8, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_affine_shift_of_start_is_invisible(c, b):
    _, r1 = solve(interval(), 2, SolveConfig(h=1 / 32), phi0=_sine)
    _, r2 = solve(interval(), 2, SolveConfig(h=1 / 32), phi0=lambda x: _sine(x) + c + b * x[:, 0])
    assert r1.iterations == r2.iterations
    # the baked-in affine part only adds round-off: a fourth difference of
    # samples of size |phi| carries at most 16 eps |phi| / h^4
    h = 1 / 32
    floor = 16 * np.finfo(float).eps * (abs(c) + abs(b) + 0.01) / h ** 4
    assert np.allclose(r1.residual_history, r2.residual_history, rtol=1e-6, atol=floor)


def test_report_json_and_csv(tmp_path):
    u, rep = solve(interval(), 2, SolveConfig(h=1 / 16), phi0=_sine)
    rep.to_json(tmp_path / "report.json")
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["status"] == "converged"
    assert set(data["tau_history"]) == {"first", "last", "min", "steps"}
    write_solution_csv(tmp_path / "sol.csv", u, residual(u, 2), {"status": rep.status})
    lines = (tmp_path / "sol.csv").read_text().splitlines()
    assert lines[-1] == '# status: "converged"'
    rows = list(csv.reader(l for l in lines if not l.startswith("#")))
    assert rows[0] == ["xi_1", "phi", "u", "det", "residual"]
    assert len(rows) - 1 == int(u.grid.defined.sum())
    mid = next(r for r in rows[1:] if float(r[0]) == 0.5)
    assert float(mid[3]) == pytest.approx(4.0, rel=1e-6)


def test_dump_json_nonfinite():
    assert json.loads(dump_json({"a": math.nan, "b": [math.inf, 1.0]})) == {"a": None, "b": [None, 1.0]}


def test_smooth_random_field_deterministic():
    g = solve(unit_square(), 4, SolveConfig(h=1 / 16, max_iters=0))[0].grid
    a = smooth_random_field(g, 1e-3, seed=5)
    b = smooth_random_field(g, 1e-3, seed=5)
    assert np.array_equal(a.values, b.values)
    assert np.max(np.abs(a.values[g.defined])) == pytest.approx(1e-3)
    assert isinstance(a, GridField)
