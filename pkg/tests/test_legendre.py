import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.field_calculus import NotPositiveDefinite, Potential
from abreu.legendre import dual_residual, involution_check, to_dual
from abreu.polytope import make_grid, standard_simplex, unit_square

from helpers import LEVELS, analytic_v, ratios, sup_on


def _quadratic(poly=unit_square(), h=1 / 16, Q=None):
    Q = np.eye(2) if Q is None else np.asarray(Q)
    g = make_grid(poly, h)
    return Potential.from_function(g, lambda x: 0.5 * np.einsum("ki,ij,kj->k", x, Q, x)), Q


def test_interval_closed_form():
    u, _, _ = analytic_v("interval", 1 / 32)
    s = to_dual(u)
    xi = s.xi[:, 0]
    assert np.allclose(s.x[:, 0], np.log(xi / (1 - xi)), atol=1e-12)
    assert np.allclose(s.f, np.log1p(np.exp(s.x[:, 0])), atol=1e-12)
    j = int(np.argmin(np.abs(xi - 0.5)))
    assert s.x[j, 0] == pytest.approx(0.0, abs=1e-14)
    assert s.f[j] == pytest.approx(np.log(2), abs=1e-14)


def test_simplex_closed_form():
    # the dual of v on the standard simplex is log(1 + e^{x1} + e^{x2})
    u, _, _ = analytic_v("simplex", 1 / 32)
    s = to_dual(u)
    assert np.allclose(s.f, np.log1p(np.exp(s.x).sum(axis=1)), atol=1e-10)
    # at the barycenter x = 0 and f = log 3
    assert np.log1p(2 * np.exp(0.0)) == pytest.approx(np.log(3))


def test_quadratic_self_dual():
    u, _ = _quadratic()
    s = to_dual(u)
    assert np.allclose(s.x, s.xi, atol=1e-12)
    assert np.allclose(s.f, 0.5 * np.sum(s.x ** 2, axis=1), atol=1e-12)
    assert np.allclose(s.hess_f, np.eye(2), atol=1e-9)
    assert involution_check(u) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-0.4, 0.4), st.floats(0.5, 3.0))
def test_general_quadratic_dual(a, b, c):
    Q = np.array([[a, b], [b, c]])
    u, Q = _quadratic(Q=Q)
    s = to_dual(u)
    Qi = np.linalg.inv(Q)
    assert np.allclose(s.hess_f, Qi, atol=1e-8)
    assert np.allclose(s.f, 0.5 * np.einsum("ki,ij,kj->k", s.x, Qi, s.x), atol=1e-10)
    assert involution_check(u) < 1e-10
    assert s.monotonicity_min() >= np.linalg.eigvalsh(Q)[0] - 1e-9


@pytest.mark.parametrize("name", ["interval", "square", "simplex"])
def test_duality_identities(name):
    u, _, _ = analytic_v(name, 1 / 32)
    s = to_dual(u)
    assert np.max(np.abs(s.identity_defect())) < 1e-12
    assert np.max(np.abs(s.det_duality())) < 1e-12
    assert s.monotonicity_min() > 0


def test_involution_converges_on_v():
    errs = []
    for h in LEVELS[:3]:
        u, _, sub = analytic_v("square", h)
        errs.append(involution_check(u, region=sub))
    assert all(3.5 <= r <= 4.5 for r in ratios(errs)), ratios(errs)


def test_dual_residual_zero_for_flat():
    u, _ = _quadratic()
    r = dual_residual(u, 0.0)
    assert np.max(np.abs(r.values[r.mask])) < 1e-9


@pytest.mark.parametrize("name", ["interval", "square"])
def test_dual_residual_converges(name):
    errs = []
    for h in LEVELS:
        u, A, sub = analytic_v(name, h)
        errs.append(sup_on(dual_residual(u, A), sub))
    assert errs[-1] < 1e-3
    assert all(3.5 <= r <= 4.5 for r in ratios(errs)), ratios(errs)


def test_duplicate_images_rejected():
    u, _ = _quadratic(h=1 / 8)
    with pytest.raises(NotPositiveDefinite, match="duplicate"):
        to_dual(u, dup_tol=10.0)


def test_involution_needs_stencil():
    u, _ = _quadratic(h=1 / 8)
    with pytest.raises(ValueError):
        involution_check(u, region=np.zeros(u.grid.size, dtype=bool))


def test_csv_export(tmp_path):
    u, _, _ = analytic_v("simplex", 1 / 16)
    s = to_dual(u)
    text = s.to_csv(tmp_path / "dual.csv")
    lines = (tmp_path / "dual.csv").read_text().splitlines()
    assert text.splitlines() == lines
    assert lines[0] == "xi_1,xi_2,x_1,x_2,f,det_hess_f"
    assert len(lines) == len(s) + 1
    first = [float(v) for v in lines[1].split(",")]
    assert first[4] == s.f[0] and first[5] == s.det_f[0]
    assert s[0]["xi"].shape == (2,)
