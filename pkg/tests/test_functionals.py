from fractions import Fraction
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.field_calculus import GridField, Potential
from abreu.functionals import (CurvatureSpec, F_A, L_A, Polynomial, affine_residuals,
                               balanced_affine, functional_report, log_delta_integral, norm_b,
                               normalize, quadrature)
from abreu.guillemin import GuilleminPotential
from abreu.polytope import Polytope, interval, make_grid, standard_simplex, unit_cube, unit_square
from abreu.stability import CreaseFunction

# closed forms: L_A(v) = n vol; int log det(v_ij) = -sum_k int log delta_k
# interval/square: int_0^1 log x dx = -1; simplex: int log xi_1 over the triangle = -3/4
CASES = [
    (interval(), 2, 1.0, -1.0),
    (unit_square(), 4, 2.0, -2.0),
    (standard_simplex(), 6, 1.0, -1.25),
]


@pytest.mark.parametrize("poly,A,L,F", CASES)
def test_L_A_of_guillemin(poly, A, L, F):
    gp = GuilleminPotential(poly)
    assert L_A(poly, A, gp, h=1 / 128) == pytest.approx(L, abs=1e-3)


def test_L_A_gap_decreases():
    gp = GuilleminPotential(unit_square())
    gaps = [abs(L_A(unit_square(), 4, gp, h=h) - 2) for h in (1 / 16, 1 / 32, 1 / 64)]
    assert gaps[2] < gaps[1] < gaps[0]


@pytest.mark.parametrize("poly,A,L,F", CASES)
def test_F_A_of_guillemin(poly, A, L, F):
    u = Potential.guillemin(make_grid(poly, 1 / 64))
    assert F_A(poly, A, u) == pytest.approx(F, abs=2e-3)


def test_log_delta_integrals():
    assert log_delta_integral(interval(), 0) == pytest.approx(-1.0, abs=1e-12)
    for k in range(3):
        assert log_delta_integral(standard_simplex(), k) == pytest.approx(-0.75, abs=1e-12)


def test_F_A_minimizer_spot_check():
    poly = interval()
    g = make_grid(poly, 1 / 64)
    def bump(x):
        s = x[:, 0] - 0.5
        return np.where(np.abs(s) < 0.25, np.cos(2 * np.pi * s) ** 2, 0.0)

    base = F_A(poly, 2, Potential.guillemin(g))
    for eps in (0.05, -0.05, 0.02):
        u = Potential.guillemin(g, GridField.from_function(g, lambda x: eps * bump(x)))
        assert F_A(poly, 2, u) > base


def test_norm_b_examples():
    poly = interval()
    vt = GuilleminPotential(poly).normalized([0.5])
    assert norm_b(poly, vt) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert norm_b(poly, CreaseFunction((1.0,), 0.5)) == pytest.approx(0.5)
    assert norm_b(poly, Polynomial(1, {})) == 0


def test_normalize_interval():
    g = make_grid(interval(), 1 / 16)
    u = normalize(Potential.guillemin(g), [0.5])
    assert np.allclose(u.values[g.defined],
                       GuilleminPotential(interval())(g.coords[g.defined]) + math.log(2))
    with pytest.raises(ValueError):
        normalize(Potential.guillemin(g), [1.0])


def test_balanced_affine_exact():
    for poly, value in [(interval(), 2), (unit_square(), 4), (standard_simplex(), 6),
                        (unit_cube(3), 6), (standard_simplex(3), 12)]:
        A = balanced_affine(poly)
        assert A.kind == "balanced-affine"
        assert A.coeffs[(0,) * poly.dim] == value
        assert all(c == 0 for a, c in A.coeffs.items() if sum(a) > 0)
        assert all(r == 0 for r in affine_residuals(poly, A))


def test_balanced_affine_asymmetric():
    trapezoid = Polytope([[0, 1], [0, -1], [1, 0], [-1, -1]], [0, -1, 0, -3])
    A = balanced_affine(trapezoid)
    assert A.degree == 1
    assert all(abs(r) < 1e-12 for r in affine_residuals(trapezoid, A))
    lin = Polynomial.affine(Fraction(1, 3), [2, -5])
    assert L_A(trapezoid, A, lin) == 0


def test_L_A_affine_vanishes_for_balanced():
    poly = standard_simplex()
    A = balanced_affine(poly)
    assert L_A(poly, A, Polynomial.affine(3, [1, -2])) == 0


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2))
def test_L_A_linearity(a, b, which):
    poly = [interval(), unit_square(), standard_simplex()][which]
    g = make_grid(poly, 1 / 16)
    f1 = GridField.from_function(g, lambda x: np.sum(x ** 2, axis=1))
    f2 = GridField.from_function(g, lambda x: np.exp(x[:, 0]))
    u1 = Potential(g, f1, check=False)
    u2 = Potential(g, f2, check=False)
    combo = Potential(g, f1 * a + f2 * b, check=False)
    A = balanced_affine(poly)
    lhs = L_A(poly, A, combo, h=1 / 16)
    rhs = a * L_A(poly, A, u1, h=1 / 16) + b * L_A(poly, A, u2, h=1 / 16)
    scale = abs(a) * abs(L_A(poly, A, u1, h=1 / 16)) + abs(b) * abs(L_A(poly, A, u2, h=1 / 16)) + 1e-300
    assert abs(lhs - rhs) <= 1e-9 * max(scale, abs(lhs), 1e-12)


def test_quadrature_integrates_quadratics():
    Q = quadrature(standard_simplex(), 1 / 4)
    pts = Q.interior_points
    assert Q.interior(pts[:, 0] ** 2) == pytest.approx(1 / 12, abs=1e-14)
    assert Q.boundary(np.ones(len(Q.boundary_points))) == pytest.approx(3.0, abs=1e-14)


def test_curvature_spec_parse_and_round_trip():
    poly = unit_square()
    assert CurvatureSpec.parse("const:3", poly).to_dict() == {"kind": "constant", "value": 3.0}
    assert CurvatureSpec.parse("3", poly).to_dict() == {"kind": "constant", "value": 3.0}
    A = CurvatureSpec.parse("affine:2,0.5,-1", poly)
    assert A(np.array([[1.0, 1.0]]))[0] == pytest.approx(1.5)
    again = CurvatureSpec.parse(json.dumps(A.to_dict()), poly)
    assert again == A
    quad = CurvatureSpec(2, {(2, 0): 1.0, (1, 1): -2.0, (0, 0): 0.5})
    assert CurvatureSpec.from_dict(json.loads(json.dumps(quad.to_dict())), poly) == quad
    assert CurvatureSpec.parse("balanced-affine", poly).to_dict() == {"kind": "constant", "value": 4.0}


def test_curvature_spec_errors(tmp_path):
    poly = interval()
    with pytest.raises(ValueError):
        CurvatureSpec(1, {(5,): 1.0})
    with pytest.raises(ValueError):
        CurvatureSpec.parse("affine:1", poly)
    with pytest.raises(ValueError):
        CurvatureSpec.parse("nonsense", poly)
    bad = tmp_path / "a.json"
    bad.write_text('{"kind":\n')
    with pytest.raises(ValueError, match="a.json:2"):
        CurvatureSpec.parse(str(bad), poly)


def test_max_abs():
    sq = unit_square()
    assert CurvatureSpec.parse("affine:1,-3,0", sq).max_abs(sq) == 2.0
    # (xi1 - 1/2)^2 - 1 attains |.| = 1 at the interior critical point
    q = CurvatureSpec(2, {(2, 0): 1.0, (1, 0): -1.0, (0, 0): -0.75})
    assert q.max_abs(sq) == pytest.approx(1.0)


def test_functional_report_flags_trace_approximation():
    poly = interval()
    rep = functional_report(poly, 2, Potential.guillemin(make_grid(poly, 1 / 32)))
    assert rep.L_A == pytest.approx(1.0, abs=1e-3)
    assert rep.notes
