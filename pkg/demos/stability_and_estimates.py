"""Balanced curvature, a crease-family stability audit and interior estimates."""

import numpy as np

from abreu import (CreaseFamily, SolveConfig, balanced_affine, estimate_lambda, estimate_report,
                   solve, standard_simplex, to_dual)
from abreu.field_calculus import subdomain
from abreu.polytope import Polytope

trapezoid = Polytope([[0, 1], [0, -1], [1, 0], [-1, -1]], [0, -1, 0, -3])
for name, poly in (("simplex", standard_simplex()), ("trapezoid", trapezoid)):
    A = balanced_affine(poly)
    print(f"{name}: balanced A = {A.to_dict()}")
    rep = estimate_lambda(poly, A, CreaseFamily(16, 16))
    print(f"  lambda_hat = {rep.lambda_hat:.5f} ({rep.verdict}, {rep.samples} creases)")

poly = standard_simplex()
u, rep = solve(poly, 6, SolveConfig(h=1 / 32))
lam = estimate_lambda(poly, 6, CreaseFamily(16, 16)).lambda_hat
est = estimate_report(u, 6, lam=lam, C=0.05, region=subdomain(u.grid, 0.2))
print("estimates:", est.to_json())

d = to_dual(u)
print(f"dual samples: {len(d)}, max |det f * det u - 1| = {np.max(np.abs(d.det_duality())):.1e}")
