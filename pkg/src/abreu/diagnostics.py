"""Checks of the explicit interior estimates, plus reported-only quantities.

Only the determinant lower bound has a closed-form constant and is checked as
an inequality.  Section and dual-sample quantities have no explicit constants;
they are reported so that finiteness and refinement stability can be judged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .field_calculus import Potential
from .functionals import L_A, as_curvature, norm_b
from .legendre import to_dual
from .polytope import Polytope, diameter


def det_lower_constant(poly: Polytope, A, h: float | None = None) -> float:
    """``C1 = (4/n * max|A| * diam^2)^(-n)``; infinite when ``A`` vanishes."""
    A = as_curvature(A, poly)
    n = poly.dim
    m = A.max_abs(poly, h)
    if m == 0:
        return math.inf
    return (4.0 / n * m * diameter(poly) ** 2) ** (-n)


def check_det_lower(u: Potential, A, mask=None) -> tuple[float, float, bool]:
    """``(C1, min det, ok)`` over core nodes (or ``mask``)."""
    poly = u.grid.poly
    c1 = det_lower_constant(poly, A, u.grid.h)
    m = u.core_mask if mask is None else (mask & u.hessian_mask)
    dmin = float(np.min(u.dets[m]))
    return c1, dmin, dmin >= c1


def energy_identity(poly: Polytope, A, u, h: float | None = None) -> float:
    """``|L_A(u) - n vol|``; small when ``u`` solves the equation."""
    if h is None:
        h = u.grid.h if isinstance(u, Potential) else 1 / 64
    return abs(L_A(poly, A, u, h) - poly.dim * float(poly.volume))


def norm_b_bound(poly: Polytope, A, lam: float, u, h: float | None = None,
                 tol: float = 1e-9) -> tuple[float, float, bool]:
    """``(||u||_b, n vol / lam, ok)`` for ``u`` normalized at some interior point.

    ``lam`` from a crease family over-estimates the true constant, so this is a
    consistency check rather than a proof of the bound.
    """
    if h is None:
        h = u.grid.h if isinstance(u, Potential) else 1 / 64
    nb = norm_b(poly, u, h)
    bound = poly.dim * float(poly.volume) / lam if lam > 0 else math.inf
    return nb, bound, nb <= bound + tol


@dataclass
class SectionData:
    C: float
    nodes: int
    b: float
    max_det_half: float
    mask: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"C": self.C, "nodes": self.nodes, "b": self.b, "max_det_half": self.max_det_half}


def section_report(u: Potential, p0, C: float) -> SectionData:
    """Section ``{u <= C}`` of ``u`` normalized at ``p0``.

    Returns the node mask, ``b = max |grad u|^2`` over it and the largest
    ``det(u_ij)`` on ``{u <= C/2}``.  Raises when the section reaches nodes
    outside the core, where it is no longer compactly contained.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    un = u.normalize(p0)
    g = un.grid
    vals = un.values
    inside = g.defined & (vals <= C)
    if not inside.any():
        raise ValueError("empty section")
    if np.any(inside & ~un.core_mask):
        raise ValueError("section is not compactly contained in the core region")
    grad = un.gradient()
    b = float(np.max(np.sum(grad[inside] ** 2, axis=1)))
    half = inside & (vals <= C / 2)
    mdet = float(np.max(un.dets[half])) if half.any() else float("nan")
    return SectionData(float(C), int(inside.sum()), b, mdet, inside)


@dataclass
class DualWeightData:
    d: float
    c: float
    samples: int
    b_sup: float
    ratio_sup: float
    rho_ratio_sup: float

    def to_dict(self) -> dict:
        return asdict(self)


def dual_weight_quantities(x, f, det, n: int, d: float, c: float):
    """Pointwise ``(1+|x|^2)/(d+f)^2``, ``e^{-cf} det/(d+f)^{2n}`` and its root form.

    The root form is ``e^{-cf/(n+2)} rho/(d+f)^{2n/(n+2)}`` with
    ``rho = det^{1/(n+2)}``, i.e. the ``(n+2)``-th root of the second quantity.
    """
    x = np.atleast_2d(x)
    f = np.atleast_1d(f)
    det = np.atleast_1d(det)
    df = d + f
    if np.any(df <= 0):
        raise ValueError("d + f must be positive at every sample")
    b = (1.0 + np.sum(x ** 2, axis=1)) / df ** 2
    ratio = np.exp(-c * f) * det / df ** (2 * n)
    rho_ratio = np.exp(-c * f / (n + 2)) * det ** (1.0 / (n + 2)) / df ** (2.0 * n / (n + 2))
    return b, ratio, rho_ratio


def dual_weight_report(u: Potential, d: float, c: float, region=None) -> DualWeightData:
    """Suprema of the dual-sample quantities, optionally over a node mask."""
    if d <= 0 or c <= 0:
        raise ValueError("d and c must be positive")
    s = to_dual(u)
    keep = np.ones(len(s), dtype=bool) if region is None else region[s.nodes]
    if not keep.any():
        raise ValueError("no dual samples in the region")
    b, ratio, rr = dual_weight_quantities(s.x[keep], s.f[keep], np.linalg.det(s.hess_u[keep]),
                                      u.grid.dim, d, c)
    return DualWeightData(float(d), float(c), int(keep.sum()), float(b.max()), float(ratio.max()),
                       float(rr.max()))


@dataclass
class EstimateReport:
    C1: float
    min_det: float
    det_bound_ok: bool
    energy_gap: float
    norm_b: float | None = None
    norm_b_bound: float | None = None
    norm_b_ok: bool | None = None
    section: dict | None = None
    dual_weights: dict | None = None
    checked: tuple = ("det_lower",)
    reported_only: tuple = ("section", "dual_weights")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checked"] = list(self.checked)
        d["reported_only"] = list(self.reported_only)
        return d

    def to_json(self) -> str:
        from .solver import dump_json

        return dump_json(self.to_dict())


def estimate_report(u: Potential, A, p0=None, lam: float | None = None, C: float | None = None,
                    d: float = 1.0, c: float = 1.0, region=None) -> EstimateReport:
    poly = u.grid.poly
    c1, dmin, ok = check_det_lower(u, A)
    rep = EstimateReport(c1, dmin, ok, energy_identity(poly, A, u))
    p0 = poly.centroid if p0 is None else np.asarray(p0, dtype=float)
    checked = ["det_lower"]
    if lam is not None:
        rep.norm_b, rep.norm_b_bound, rep.norm_b_ok = norm_b_bound(poly, A, lam, u.normalize(p0))
        checked.append("norm_b (consistency only)")
    rep.checked = tuple(checked)
    if C is not None:
        try:
            rep.section = section_report(u, p0, C).to_dict()
        except ValueError as exc:
            rep.section = {"error": str(exc)}
    try:
        rep.dual_weights = dual_weight_report(u, d, c, region).to_dict()
    except ValueError as exc:
        rep.dual_weights = {"error": str(exc)}
    return rep


# interface names kept for callers that use them
lemma34_report = dual_weight_report
lemma34_quantities = dual_weight_quantities
