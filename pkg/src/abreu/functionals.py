"""The functionals ``L_A``, ``F_A``, the boundary norm and the balanced affine ``A``.

Integrals of polynomials use the exact moment tables of
:mod:`abreu.polytope`.  Everything else goes through composite Gauss rules on
the exact triangulation (collapsed-coordinate rules on each simplex); the
resolution is tied to a grid spacing ``h``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .field_calculus import GridField, Potential
from .guillemin import GuilleminPotential
from .polytope import Polytope, Region, _solve, as_fraction, multi_indices

MAX_DEGREE = 4


class Polynomial:
    """Polynomial ``sum_alpha c_alpha xi^alpha`` keyed by exponent tuples."""

    def __init__(self, dim: int, coeffs: dict | None = None):
        self.dim = dim
        self.coeffs = {}
        for alpha, c in (coeffs or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim:
                raise ValueError(f"exponent {alpha} does not match dimension {dim}")
            if c != 0:
                self.coeffs[alpha] = c
        self.exact = all(isinstance(c, (int, Fraction)) for c in self.coeffs.values())

    @classmethod
    def affine(cls, const, grad) -> "Polynomial":
        grad = list(grad)
        n = len(grad)
        coeffs = {(0,) * n: const}
        for i, g in enumerate(grad):
            e = [0] * n
            e[i] = 1
            coeffs[tuple(e)] = g
        return cls(n, coeffs)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.coeffs), default=0)

    def __call__(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.zeros(len(xi))
        for alpha, c in self.coeffs.items():
            out += float(c) * np.prod(xi ** np.array(alpha), axis=1)
        return out

    def gradient(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.zeros_like(xi)
        for alpha, c in self.coeffs.items():
            for i, a in enumerate(alpha):
                if a:
                    beta = np.array(alpha)
                    beta[i] -= 1
                    out[:, i] += float(c) * a * np.prod(xi ** beta, axis=1)
        return out

    def __add__(self, other: "Polynomial") -> "Polynomial":
        coeffs = dict(self.coeffs)
        for a, c in other.coeffs.items():
            coeffs[a] = coeffs.get(a, 0) + c
        return Polynomial(self.dim, coeffs)

    def __mul__(self, t) -> "Polynomial":
        return Polynomial(self.dim, {a: c * t for a, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        keys = set(self.coeffs) | set(other.coeffs)
        return self.dim == other.dim and all(
            self.coeffs.get(k, 0) == other.coeffs.get(k, 0) for k in keys)

    def __hash__(self):
        return hash((self.dim, tuple(sorted((k, float(v)) for k, v in self.coeffs.items()))))

    def __repr__(self):
        return f"Polynomial(dim={self.dim}, coeffs={self.coeffs})"


def _key_to_alpha(key: str, n: int) -> tuple[int, ...]:
    alpha = [0] * n
    key = key.strip()
    if key in ("0", "1", ""):
        return tuple(alpha)
    for factor in key.split("*"):
        m = re.fullmatch(r"e(\d+)(?:\^(\d+))?", factor.strip())
        if not m:
            raise ValueError(f"unrecognized monomial key {key!r}")
        i = int(m.group(1)) - 1
        if not 0 <= i < n:
            raise ValueError(f"monomial {key!r} refers to a missing coordinate")
        alpha[i] += int(m.group(2) or 1)
    return tuple(alpha)


def _alpha_to_key(alpha) -> str:
    parts = []
    for i, a in enumerate(alpha):
        if a == 1:
            parts.append(f"e{i + 1}")
        elif a > 1:
            parts.append(f"e{i + 1}^{a}")
    return "*".join(parts) or "0"


class CurvatureSpec(Polynomial):
    """The prescribed function ``A`` (polynomial of degree <= 4)."""

    KINDS = ("constant", "affine", "polynomial", "balanced-affine")

    def __init__(self, dim: int, coeffs: dict | None = None, kind: str | None = None):
        super().__init__(dim, coeffs)
        if self.degree > MAX_DEGREE:
            raise ValueError(f"A has degree {self.degree} > {MAX_DEGREE}")
        if kind is None:
            kind = "constant" if self.degree == 0 else "affine" if self.degree == 1 else "polynomial"
        if kind not in self.KINDS:
            raise ValueError(f"unknown curvature kind {kind!r}")
        self.kind = kind

    @classmethod
    def constant(cls, dim: int, value) -> "CurvatureSpec":
        return cls(dim, {(0,) * dim: value}, "constant")

    def max_abs(self, poly: Polytope, h: float | None = None) -> float:
        """``max |A|`` over the closed polytope.

        Exact (vertex maximum) for affine ``A``; otherwise the maximum over the
        vertices, the stationary point of a quadratic, and a dense quadrature
        point cloud.
        """
        vals = list(np.abs(self(poly.vertices)))
        if self.degree >= 2:
            pts = quadrature(poly, h or 0.05).interior_points
            vals.extend(np.abs(self(pts)))
            if self.degree == 2:
                n = self.dim
                Hm = np.zeros((n, n))
                b = np.zeros(n)
                for a, c in self.coeffs.items():
                    if sum(a) == 2:
                        idx = [i for i, k in enumerate(a) for _ in range(k)]
                        Hm[idx[0], idx[1]] += float(c)
                        Hm[idx[1], idx[0]] += float(c)
                    elif sum(a) == 1:
                        b[a.index(1)] = float(c)
                try:
                    crit = np.linalg.solve(Hm, -b)
                    if np.all(crit @ poly.normals.T - poly.offsets >= 0):
                        vals.append(abs(self(crit)[0]))
                except np.linalg.LinAlgError:
                    pass
        return float(max(vals))

    def to_dict(self, simplify: bool = True) -> dict:
        if simplify and self.degree == 0:
            return {"kind": "constant", "value": float(self.coeffs.get((0,) * self.dim, 0.0))}
        coeffs = {_alpha_to_key(a): float(c) for a, c in sorted(self.coeffs.items())}
        return {"kind": self.kind, "dim": self.dim, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, data: dict, poly: Polytope) -> "CurvatureSpec":
        kind = data.get("kind")
        n = poly.dim
        if kind == "balanced-affine":
            return balanced_affine(poly)
        if kind == "constant":
            if "value" in data:
                return cls.constant(n, float(data["value"]))
        if kind not in cls.KINDS:
            raise ValueError(f"unknown curvature kind {kind!r}")
        coeffs = {_key_to_alpha(k, n): float(v) for k, v in data.get("coeffs", {}).items()}
        return cls(n, coeffs, kind)

    @classmethod
    def parse(cls, text: str, poly: Polytope) -> "CurvatureSpec":
        """Inline forms ``balanced-affine``, ``3``, ``const:3`` or ``affine:2,0.5``; else JSON or a path."""
        import json
        import os

        text = text.strip()
        if text == "balanced-affine":
            return balanced_affine(poly)
        try:
            return cls.constant(poly.dim, float(text))
        except ValueError:
            pass
        if text.startswith("const:"):
            return cls.constant(poly.dim, float(text[6:]))
        if text.startswith("affine:"):
            vals = [float(x) for x in text[7:].split(",")]
            if len(vals) != poly.dim + 1:
                raise ValueError("affine:<a0>,<a1>,...,<an> expects n+1 numbers")
            return cls(poly.dim, Polynomial.affine(vals[0], vals[1:]).coeffs, "affine")
        if text.startswith("{"):
            return cls.from_dict(json.loads(text), poly)
        if os.path.exists(text):
            with open(text) as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{text}:{exc.lineno}: {exc.msg}") from exc
            return cls.from_dict(data, poly)
        raise ValueError(f"cannot interpret curvature spec {text!r}")


def as_curvature(A, poly: Polytope) -> CurvatureSpec:
    if isinstance(A, CurvatureSpec):
        return A
    if isinstance(A, Polynomial):
        return CurvatureSpec(A.dim, A.coeffs)
    if isinstance(A, str):
        return CurvatureSpec.parse(A, poly)
    return CurvatureSpec.constant(poly.dim, A)


# ---------------------------------------------------------------------------
# quadrature


def _collapsed_rule(d: int, m: int, q: int):
    """Composite Gauss rule on the reference d-simplex in barycentric form."""
    if d == 0:
        return np.ones((1, 1)), np.ones(1)
    x, w = np.polynomial.legendre.leggauss(q)
    x, w = (x + 1) / 2, w / 2
    sub = (np.arange(m)[:, None] + x[None, :]).ravel() / m
    wsub = np.tile(w, m) / m
    grids = np.meshgrid(*([sub] * d), indexing="ij")
    S = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.meshgrid(*([wsub] * d), indexing="ij"), axis=0).ravel()
    lam = np.zeros((len(S), d + 1))
    rest = np.ones(len(S))
    for i in range(d):
        lam[:, i + 1] = rest * S[:, i]
        rest = rest * (1 - S[:, i])
    lam[:, 0] = 1 - lam[:, 1:].sum(axis=1)
    jac = np.ones(len(S))
    for i in range(d - 1):
        jac *= (1 - S[:, i]) ** (d - 1 - i)
    return lam, W * jac * math.factorial(d)


@dataclass
class Quadrature:
    """Quadrature nodes/weights for ``int_Delta . dmu`` and ``int_boundary . dsigma``."""

    interior_points: np.ndarray
    interior_weights: np.ndarray
    boundary_points: np.ndarray
    boundary_weights: np.ndarray
    boundary_facet: np.ndarray
    h: float
    order: int = 3
    notes: list = field(default_factory=list)

    def interior(self, values) -> float:
        return float(np.dot(self.interior_weights, values))

    def boundary(self, values) -> float:
        return float(np.dot(self.boundary_weights, values))


def _simplex_nodes(simplex, mass, h, order):
    pts = np.array([[float(a) for a in p] for p in simplex])
    d = len(pts) - 1
    span = max((np.linalg.norm(a - b) for a in pts for b in pts), default=0.0)
    m = max(1, int(math.ceil(span / h - 1e-9)))
    lam, w = _collapsed_rule(d, m, order)
    return lam @ pts, w * float(mass)


def _region_quadrature(reg: Region, h: float, order: int, boundary: bool = True) -> Quadrature:
    ip, iw = [], []
    if reg.full_dimensional:
        for s in reg.triangulate():
            p, w = _simplex_nodes(s, reg.volume_simplex(s), h, order)
            ip.append(p)
            iw.append(w)
    bp, bw, bf = [], [], []
    n = reg.dim
    if boundary:
        from .polytope import _affine_rank, _det

        for k in range(len(reg.normals)):
            if reg.weights[k] is None:
                continue
            vids = reg.face(k)
            if not vids or _affine_rank([reg.vertices_exact[i] for i in vids]) != n - 1:
                continue
            for s in reg.triangulate(vids, n - 1):
                rows = [list(reg.normals[k])] + [[a - b for a, b in zip(p, s[0])] for p in s[1:]]
                mass = abs(_det(rows)) * reg.weights[k] / math.factorial(n - 1)
                p, w = _simplex_nodes(s, mass, h, order)
                bp.append(p)
                bw.append(w)
                bf.append(np.full(len(w), k))
    cat = lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape)
    return Quadrature(cat(ip, (0, n)), cat(iw, (0,)), cat(bp, (0, n)), cat(bw, (0,)),
                      cat(bf, (0,)).astype(int), h, order)


@lru_cache(maxsize=32)
def quadrature(poly: Polytope, h: float, order: int = 3) -> Quadrature:
    """Composite rule with sub-cells of diameter about ``h``."""
    return _region_quadrature(poly.region, h, order)


# ---------------------------------------------------------------------------
# exact polynomial integrals


def _poly_integrals(poly_or_region, A: Polynomial, u: Polynomial):
    """``(int_boundary u dsigma, int A u dmu)`` exactly via moments."""
    reg = poly_or_region.region if isinstance(poly_or_region, Polytope) else poly_or_region
    deg_b = u.degree
    deg_i = A.degree + u.degree
    if deg_i > 2:
        return None
    bm = reg.boundary_moments(max(deg_b, 0))
    im = reg.interior_moments(deg_i)
    conv = (lambda c: as_fraction(c)) if (A.exact and u.exact) else float
    bnd = sum((conv(c) * bm[a] for a, c in u.coeffs.items()), conv(0))
    inner = conv(0)
    for a, ca in A.coeffs.items():
        for b, cb in u.coeffs.items():
            ab = tuple(x + y for x, y in zip(a, b))
            inner += conv(ca) * conv(cb) * im[ab]
    return bnd, inner


def _split_affine(u):
    """Separate an exactly-known affine part from a potential."""
    if isinstance(u, Potential):
        c, g = u.affine
        return Polynomial.affine(c, g), u
    return None, u


def _eval_nonpoly(u, pts) -> np.ndarray:
    if isinstance(u, Potential):
        out = u.phi.sample(pts)
        if u.gp is not None:
            out = out + u.gp(pts)
        return out
    return np.asarray(u(pts), dtype=float)


@dataclass
class FunctionalReport:
    L_A: float
    F_A: float | None
    norm_b: float
    resolution: float
    notes: list = field(default_factory=list)


def boundary_and_interior(poly: Polytope, A, u, h: float = 1 / 64, order: int = 3):
    """``(int_boundary u dsigma, int A u dmu)`` by the exact path when available."""
    A = as_curvature(A, poly)
    if hasattr(u, "exact_integrals"):
        return u.exact_integrals(poly, A)
    if isinstance(u, GuilleminPotential):
        u = _GuilleminCallable(u)
    if isinstance(u, Polynomial):
        exact = _poly_integrals(poly, A, u)
        if exact is not None:
            return float(exact[0]), float(exact[1])
    aff, rest = _split_affine(u)
    b = i = 0.0
    if aff is not None:
        ba, ia = _poly_integrals(poly, A, aff)
        b, i = float(ba), float(ia)
        if isinstance(rest, Potential) and rest.gp is None and not np.any(rest.phi.values[rest.grid.defined]):
            return b, i
    Q = quadrature(poly, float(h), order)
    b += Q.boundary(_eval_nonpoly(rest, Q.boundary_points))
    i += Q.interior(A(Q.interior_points) * _eval_nonpoly(rest, Q.interior_points))
    return b, i


class _GuilleminCallable:
    def __init__(self, gp):
        self.gp = gp

    def __call__(self, pts):
        return self.gp(pts)


def L_A(poly: Polytope, A, u, h: float = 1 / 64, order: int = 3) -> float:
    """``int_boundary u dsigma - int A u dmu``."""
    b, i = boundary_and_interior(poly, A, u, h, order)
    return b - i


def norm_b(poly: Polytope, u, h: float = 1 / 64, order: int = 3) -> float:
    """``int_boundary u dsigma``."""
    return boundary_and_interior(poly, CurvatureSpec.constant(poly.dim, 0.0), u, h, order)[0]


def _slab_volume(poly: Polytope, k: int, t: float) -> float:
    reg = poly.region
    nk = reg.normals[k]
    clipped = Region(list(reg.normals) + [tuple(-a for a in nk)],
                     list(reg.offsets) + [-(reg.offsets[k] + as_fraction(t))],
                     list(reg.weights) + [None])
    return float(clipped.interior_moments(0)[(0,) * poly.dim])


@lru_cache(maxsize=64)
def log_delta_integral(poly: Polytope, k: int) -> float:
    """``int_Delta log delta_k dmu`` by slicing along ``delta_k``.

    With ``V(t) = vol{delta_k <= t}`` (piecewise polynomial),
    ``int log delta_k = vol log T - int_0^T V(t)/t dt`` and the remaining
    integrand is smooth on each piece.
    """
    vals = sorted({float(sum(a * x for a, x in zip(poly.region.normals[k], v)) - poly.region.offsets[k])
                   for v in poly.vertices_exact})
    T = vals[-1]
    x, w = np.polynomial.legendre.leggauss(12)
    integral = 0.0
    for a, b in zip(vals[:-1], vals[1:]):
        if b - a < 1e-15:
            continue
        ts = (a + b) / 2 + (b - a) / 2 * x
        Vs = np.array([_slab_volume(poly, k, t) for t in ts])
        integral += (b - a) / 2 * np.dot(w, Vs / ts)
    return float(poly.volume) * math.log(T) - integral


def log_det_integral(u: Potential, h: float | None = None, order: int = 3) -> float:
    """``int_Delta log det(u_ij) dmu`` with the Guillemin singularity split off."""
    poly = u.grid.poly
    h = u.grid.h if h is None else h
    Q = quadrature(poly, float(h), order)
    hm = u.hessian_mask
    logdet = np.full(u.grid.size, np.nan)
    if u.gp is None:
        logdet[hm] = np.log(u.dets[hm])
        return Q.interior(GridField(u.grid, logdet, hm).sample(Q.interior_points))
    logP, _ = u.gp.log_det_split(Q.interior_points)
    total = Q.interior(logP) - sum(log_delta_integral(poly, k) for k in range(poly.n_facets))
    if np.any(u.phi.values[u.grid.defined]):
        logdet[hm] = np.log(u.dets[hm]) - np.log(np.linalg.det(u.gp.hessian(u.grid.coords[hm])))
        total += Q.interior(GridField(u.grid, logdet, hm).sample(Q.interior_points))
    return total


def F_A(poly: Polytope, A, u: Potential, h: float | None = None, order: int = 3) -> float:
    """``-int log det(u_ij) dmu + L_A(u)``."""
    h = u.grid.h if h is None else h
    return -log_det_integral(u, h, order) + L_A(poly, A, u, h, order)


def functional_report(poly: Polytope, A, u: Potential, h: float | None = None) -> FunctionalReport:
    h = u.grid.h if h is None else h
    notes = ["phi boundary trace: multilinear interpolation, nearest-node extrapolation in the collar"]
    return FunctionalReport(L_A(poly, A, u, h), F_A(poly, A, u, h), norm_b(poly, u, h), h, notes)


def balanced_affine(poly: Polytope) -> CurvatureSpec:
    """The affine ``A`` for which ``L_A`` vanishes on all affine functions."""
    n = poly.dim
    im = poly.region.interior_moments(2)
    bm = poly.region.boundary_moments(1)
    basis = [(0,) * n] + [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]
    M = [[im[tuple(a + b for a, b in zip(r, c))] for c in basis] for r in basis]
    rhs = [bm[r] for r in basis]
    sol = _solve(M, rhs)
    if sol is None:
        raise ValueError("degenerate moment matrix")
    spec = CurvatureSpec(n, dict(zip(basis, sol)), "balanced-affine")
    return spec


def affine_residuals(poly: Polytope, A) -> list:
    """``int A xi_j dmu - int_boundary xi_j dsigma`` for ``j = 0..n`` (``xi_0 = 1``)."""
    A = as_curvature(A, poly)
    n = poly.dim
    out = []
    for j in range(n + 1):
        e = Polynomial(n, {(0,) * n: 1}) if j == 0 else Polynomial(
            n, {tuple(1 if i == j - 1 else 0 for i in range(n)): 1})
        exact = _poly_integrals(poly, A, e)
        if exact is None:
            # Gauss order exact for degree A.degree + 1 times the collapsed Jacobian
            Q = _region_quadrature(poly.region, 1e9, (A.degree + n) // 2 + 1)
            exact = (Q.boundary(e(Q.boundary_points)),
                     Q.interior(A(Q.interior_points) * e(Q.interior_points)))
        b, i = exact
        out.append(i - b)
    return out


def normalize(u, p0):
    """Subtract the supporting affine function at ``p0``."""
    p0 = np.asarray(p0, dtype=float)
    if isinstance(u, Potential):
        return u.normalize(p0)
    if isinstance(u, GuilleminPotential):
        return u.normalized(p0)
    if isinstance(u, Polynomial):
        val = u(p0)[0]
        grad = u.gradient(p0)[0]
        return u + Polynomial.affine(-(val - grad @ p0), -grad)
    raise TypeError(f"cannot normalize {type(u).__name__}")
