"""Uniform K-stability audit over families of crease functions."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .functionals import (CurvatureSpec, _poly_integrals, _region_quadrature, affine_residuals,
                          as_curvature, Polynomial)
from .polytope import Polytope, clip

AFFINE_TOL = 1e-8
LAMBDA_TOL = 1e-6


@dataclass(frozen=True)
class CreaseFunction:
    """``scale * max(0, <direction, xi> - offset)``."""

    direction: tuple
    offset: float
    scale: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))

    @classmethod
    def through(cls, direction, p0) -> "CreaseFunction":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(tuple(d), float(d @ np.asarray(p0, dtype=float)))

    def __call__(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return self.scale * np.maximum(0.0, xi @ np.array(self.direction) - self.offset)

    def scaled(self, t: float) -> "CreaseFunction":
        return CreaseFunction(self.direction, self.offset, self.scale * t)

    def pivot(self, poly: Polytope) -> np.ndarray:
        """A point of the closed polytope on the crease hyperplane."""
        reg = clip(poly, self.direction, self.offset)
        k = len(reg.normals) - 1
        pts = [reg.vertices_exact[i] for i in reg.face(k)]
        if not pts:
            raise ValueError("crease hyperplane misses the polytope")
        return np.array([[float(a) for a in p] for p in pts]).mean(axis=0)

    def exact_integrals(self, poly: Polytope, A, h: float = 1 / 64):
        """``(int_boundary u dsigma, int A u dmu)`` on the clipped polytope."""
        A = as_curvature(A, poly)
        reg = clip(poly, self.direction, self.offset)
        if not reg.vertices_exact:
            return 0.0, 0.0
        lin = Polynomial.affine(-self.offset, self.direction)
        exact = _poly_integrals(reg, A, lin)
        if exact is None:
            Q = _region_quadrature(reg, h, 4)
            b = Q.boundary(lin(Q.boundary_points))
            i = Q.interior(A(Q.interior_points) * lin(Q.interior_points))
        else:
            b, i = (float(x) for x in exact)
        return self.scale * b, self.scale * i


@dataclass(frozen=True)
class CreaseFamily:
    """``directions`` unit vectors times ``offsets - 1`` interior levels each.

    Offsets split each direction's support interval into ``offsets`` equal
    parts and use the interior break points, so doubling ``offsets`` yields a
    superset of creases.
    """

    directions: int = 8
    offsets: int = 16

    def direction_vectors(self, n: int) -> np.ndarray:
        if self.directions < 1:
            raise ValueError("empty crease family")
        if n == 1:
            return np.array([[1.0], [-1.0]])[: max(1, min(2, self.directions))]
        if n == 2:
            ang = 2 * np.pi * np.arange(self.directions) / self.directions
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        from scipy.stats import norm

        pts = qmc.Halton(d=n, scramble=False).random(self.directions + 1)[1:]
        v = norm.ppf(pts)
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def creases(self, poly: Polytope):
        if self.offsets < 2:
            raise ValueError("need at least two offset subdivisions")
        for d in self.direction_vectors(poly.dim):
            proj = poly.vertices @ d
            lo, hi = proj.min(), proj.max()
            for j in range(1, self.offsets):
                yield CreaseFunction(tuple(d), float(lo + (hi - lo) * j / self.offsets))


@dataclass
class StabilityReport:
    affine_residuals: list
    lambda_hat: float
    argmin_direction: list | None
    argmin_offset: float | None
    samples: int
    verdict: str
    ratios: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ratios")
        return d


def check_affine_vanishing(poly: Polytope, A) -> list[float]:
    """``r_j = int A xi_j dmu - int_boundary xi_j dsigma`` for ``j = 0..n``."""
    return [float(r) for r in affine_residuals(poly, A)]


def crease_ratio(poly: Polytope, A, crease: CreaseFunction) -> tuple[float, float]:
    """``(L_A(u), ||u||_b)`` for one crease."""
    b, i = crease.exact_integrals(poly, A)
    return b - i, b


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ABREU_THREADS", "1")))
    except ValueError:
        return 1


def estimate_lambda(poly: Polytope, A, family: CreaseFamily = CreaseFamily(),
                    norm_tol: float = 1e-12) -> StabilityReport:
    """Smallest ``L_A(u) / ||u||_b`` over a crease family.

    The result is an upper bound for any admissible stability constant; a
    nonpositive value witnesses failure of uniform K-stability on the family.
    """
    A = as_curvature(A, poly)
    res = check_affine_vanishing(poly, A)
    creases = list(family.creases(poly))
    if not creases:
        raise ValueError("empty crease family")
    if max(abs(r) for r in res) > AFFINE_TOL:
        return StabilityReport(res, math.nan, None, None, len(creases), "inconclusive")
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        pairs = list(pool.map(lambda c: crease_ratio(poly, A, c), creases))
    best, arg, ratios = math.inf, None, []
    for c, (la, nb) in zip(creases, pairs):
        if nb < norm_tol:
            continue
        ratio = la / nb
        ratios.append(ratio)
        if ratio < best:
            best, arg = ratio, c
    if arg is None:
        return StabilityReport(res, math.nan, None, None, 0, "inconclusive")
    verdict = ("stable-evidence" if best > LAMBDA_TOL
               else "violated" if best < -LAMBDA_TOL else "inconclusive")
    return StabilityReport(res, float(best), [float(a) for a in arg.direction], float(arg.offset),
                           len(ratios), verdict, ratios)
