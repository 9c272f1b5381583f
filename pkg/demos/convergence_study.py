"""Second-order convergence of the discrete operator and the rho residual."""

import numpy as np

from abreu import Potential, abreu_operator, make_grid, rho_residual
from abreu import standard_simplex, unit_square
from abreu.field_calculus import subdomain

cases = [("square", unit_square(), 4.0, 0.25), ("simplex", standard_simplex(), 6.0, 0.2)]
levels = [1 / 16, 1 / 32, 1 / 64, 1 / 128]

for name, poly, A, dist in cases:
    print(f"{name}: h, sup|Op(v)+A| (sampled v), sup|rho residual| (analytic Hessian)")
    prev = None
    for h in levels:
        g = make_grid(poly, h)
        sub = subdomain(g, dist)
        sampled = Potential.discrete_guillemin(g, active=subdomain(g, dist / 2))
        op = abreu_operator(sampled)
        m = op.mask & sub
        e_op = np.max(np.abs(op.values[m] + A))
        r = rho_residual(Potential.guillemin(g), A)
        # facet-distance region: its edges stay on grid lines for the slanted facet too
        lattice = np.all(g.deltas >= 0.25 - 1e-12, axis=1)
        e_rho = np.max(np.abs(r.values[r.mask & lattice]))
        tail = "" if prev is None else f"  ratios {prev[0] / e_op:.3f} {prev[1] / e_rho:.3f}"
        print(f"  {h:.6f}  {e_op:.3e}  {e_rho:.3e}{tail}")
        prev = (e_op, e_rho)

# with the analytic Hessian of v the operator itself is exact to round-off
g = make_grid(unit_square(), 1 / 32)
op = abreu_operator(Potential.guillemin(g))
print("analytic-Hessian operator defect:", np.max(np.abs(op.values[op.mask] + 4.0)))
