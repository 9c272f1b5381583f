"""Abreu's equation on convex polytopes: grids, functionals, solver, diagnostics."""

from .diagnostics import (EstimateReport, check_det_lower, energy_identity, estimate_report,
                          dual_weight_report, lemma34_report, norm_b_bound, section_report)
from .field_calculus import (GridField, NotPositiveDefinite, Potential, StencilError,
                             abreu_operator, laplace_beltrami, metric_quantities, rho_residual)
from .functionals import (CurvatureSpec, F_A, L_A, Polynomial, balanced_affine, norm_b,
                          quadrature)
from .guillemin import GuilleminPotential, corner_det, det_decay_bound
from .legendre import DualSamples, dual_residual, involution_check, to_dual
from .polytope import (Grid, Polytope, PolytopeError, boundary_measure_moments, delta, make_grid,
                       standard_simplex, unit_cube, unit_square, interval)
from .solver import SolveConfig, SolveReport, residual, solve
from .stability import CreaseFamily, CreaseFunction, StabilityReport, estimate_lambda

__version__ = "0.1.0"
