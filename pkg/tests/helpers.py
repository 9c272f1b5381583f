import numpy as np

from abreu.field_calculus import Potential, subdomain
from abreu.polytope import interval, make_grid, standard_simplex, unit_square

# (polytope factory, balanced A, fixed subdomain distance, centre)
REFERENCE = {
    "interval": (interval, 2.0, 0.25, [0.5]),
    "square": (unit_square, 4.0, 0.25, [0.5, 0.5]),
    "simplex": (standard_simplex, 6.0, 0.2, [1 / 3, 1 / 3]),
}

LEVELS = [1 / 32, 1 / 64, 1 / 128, 1 / 256]


def ratios(errors):
    return [a / b for a, b in zip(errors[:-1], errors[1:])]


def discrete_v(name, h):
    """Sampled-and-differenced Guillemin potential plus the fixed comparison subdomain."""
    factory, A, dist, _ = REFERENCE[name]
    g = make_grid(factory(), h)
    sub = subdomain(g, dist)
    active = subdomain(g, dist / 2)
    return Potential.discrete_guillemin(g, active=active), A, sub


def analytic_v(name, h):
    factory, A, dist, _ = REFERENCE[name]
    g = make_grid(factory(), h)
    return Potential.guillemin(g), A, subdomain(g, dist)


def sup_on(field, mask):
    m = field.mask & mask
    assert m.any()
    return float(np.max(np.abs(field.values[m])))


def lattice_subdomain(grid, d):
    """Nodes with every facet function at least ``d``; its edges are grid-aligned."""
    return np.all(grid.deltas >= d - 1e-12, axis=1)
