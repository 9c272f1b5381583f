"""Bounded convex polytopes given by facet inequalities.

A polytope is ``{xi : <h_k, xi> - c_k > 0 for all k}``.  Normals are
rescaled to primitive integer vectors at construction so that the lattice
boundary measure ``dsigma = dS / |h_k|`` is well defined.  All moment
computations run in exact rational arithmetic.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

EXTERIOR, COLLAR, INTERIOR = 0, 1, 2


class PolytopeError(ValueError):
    """Raised for invalid polytope input (unbounded, empty, redundant facets)."""


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    # floats go through their shortest repr so 0.1 -> 1/10
    return Fraction(repr(float(x)))


def _det(rows: Sequence[Sequence[Fraction]]) -> Fraction:
    m = [list(r) for r in rows]
    n = len(m)
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        det *= m[col][col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            if f:
                for c in range(col, n):
                    m[r][c] -= f * m[col][c]
    return det


def _solve(a: Sequence[Sequence[Fraction]], b: Sequence[Fraction]):
    """Exact solve of a square system; ``None`` if singular."""
    n = len(a)
    m = [list(a[i]) + [b[i]] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return None
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [m[i][n] for i in range(n)]


def _rank(vectors: Sequence[Sequence[Fraction]]) -> int:
    m = [list(v) for v in vectors]
    if not m:
        return 0
    rank, ncol = 0, len(m[0])
    for col in range(ncol):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col] / m[rank][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[rank])]
        rank += 1
    return rank


def _affine_rank(points: Sequence[Sequence[Fraction]]) -> int:
    if len(points) <= 1:
        return 0
    p0 = points[0]
    return _rank([[a - b for a, b in zip(p, p0)] for p in points[1:]])


def multi_indices(n: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples of length ``n`` with total degree ``<= degree``."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    return out


def _simplex_moments(pts, weight: Fraction, n: int, degree: int) -> dict:
    """Exact moments of degree <= 2 of a simplex with total mass ``weight``."""
    if degree > 2:
        raise ValueError("exact simplex moments are implemented up to degree 2")
    d1 = len(pts)
    sums = [sum((p[i] for p in pts), Fraction(0)) for i in range(n)]
    out = {}
    for alpha in multi_indices(n, degree):
        idx = [i for i, a in enumerate(alpha) for _ in range(a)]
        if not idx:
            out[alpha] = weight
        elif len(idx) == 1:
            out[alpha] = weight * sums[idx[0]] / d1
        else:
            i, j = idx
            cross = sum((p[i] * p[j] for p in pts), Fraction(0))
            out[alpha] = weight * (cross + sums[i] * sums[j]) / (d1 * (d1 + 1))
    return out


class Region:
    """Exact vertex/face engine for an intersection of half-spaces.

    ``weights[k]`` is the boundary-measure factor ``1/|h_k|^2`` used for
    constraint ``k``; ``None`` excludes that constraint's face from boundary
    integrals (used for clipping cuts).  Redundant constraints are tolerated.
    """

    def __init__(self, normals, offsets, weights):
        self.normals = [tuple(as_fraction(a) for a in row) for row in normals]
        self.offsets = [as_fraction(c) for c in offsets]
        self.weights = list(weights)
        self.dim = len(self.normals[0])

    @cached_property
    def _vertex_data(self):
        n, K = self.dim, len(self.normals)
        found: dict[tuple, set] = {}
        for combo in itertools.combinations(range(K), n):
            sol = _solve([self.normals[k] for k in combo], [self.offsets[k] for k in combo])
            if sol is None:
                continue
            sol = tuple(sol)
            if sol in found:
                continue
            slack = [sum(a * x for a, x in zip(self.normals[k], sol)) - self.offsets[k]
                     for k in range(K)]
            if all(s >= 0 for s in slack):
                found[sol] = {k for k in range(K) if slack[k] == 0}
        verts = sorted(found)
        return verts, [frozenset(found[v]) for v in verts]

    @property
    def vertices_exact(self) -> list[tuple[Fraction, ...]]:
        return self._vertex_data[0]

    @property
    def incidence(self) -> list[frozenset]:
        return self._vertex_data[1]

    @cached_property
    def full_dimensional(self) -> bool:
        return _affine_rank(self.vertices_exact) == self.dim

    def face(self, k: int) -> frozenset:
        """Vertex ids lying on constraint ``k``."""
        return frozenset(i for i, inc in enumerate(self.incidence) if k in inc)

    def _subfaces(self, vids: frozenset, dim: int):
        subs = set()
        for k in range(len(self.normals)):
            sub = frozenset(i for i in vids if k in self.incidence[i])
            if sub == vids or not sub:
                continue
            if _affine_rank([self.vertices_exact[i] for i in sub]) == dim - 1:
                subs.add(sub)
        return sorted(subs, key=sorted)

    def triangulate(self, vids: frozenset | None = None, dim: int | None = None):
        """Cone-from-centroid triangulation of a face into simplices."""
        if vids is None:
            vids, dim = frozenset(range(len(self.vertices_exact))), self.dim
        cache = self.__dict__.setdefault("_tri_cache", {})
        key = (vids, dim)
        if key in cache:
            return cache[key]
        pts = [self.vertices_exact[i] for i in sorted(vids)]
        if dim == 0:
            result = [[pts[0]]]
        else:
            c = tuple(sum(col, Fraction(0)) / len(pts) for col in zip(*pts))
            result = []
            for sub in self._subfaces(vids, dim):
                for simplex in self.triangulate(sub, dim - 1):
                    result.append([c] + simplex)
        cache[key] = result
        return result

    def volume_simplex(self, simplex) -> Fraction:
        n = self.dim
        p0 = simplex[0]
        rows = [[a - b for a, b in zip(p, p0)] for p in simplex[1:]]
        return abs(_det(rows)) / math.factorial(n)

    def interior_moments(self, degree: int) -> dict:
        if not self.full_dimensional:
            return {a: Fraction(0) for a in multi_indices(self.dim, degree)}
        total = {a: Fraction(0) for a in multi_indices(self.dim, degree)}
        for s in self.triangulate():
            for a, m in _simplex_moments(s, self.volume_simplex(s), self.dim, degree).items():
                total[a] += m
        return total

    def facet_moments(self, k: int, degree: int) -> dict:
        """Moments of constraint ``k``'s face against the lattice measure."""
        n = self.dim
        total = {a: Fraction(0) for a in multi_indices(n, degree)}
        if self.weights[k] is None:
            return total
        vids = self.face(k)
        if not vids or _affine_rank([self.vertices_exact[i] for i in vids]) != n - 1:
            return total
        nu = self.normals[k]
        for s in self.triangulate(vids, n - 1):
            p0 = s[0]
            rows = [list(nu)] + [[a - b for a, b in zip(p, p0)] for p in s[1:]]
            mass = abs(_det(rows)) * self.weights[k] / math.factorial(n - 1)
            for a, m in _simplex_moments(s, mass, n, degree).items():
                total[a] += m
        return total

    def boundary_moments(self, degree: int) -> dict:
        total = {a: Fraction(0) for a in multi_indices(self.dim, degree)}
        for k in range(len(self.normals)):
            for a, m in self.facet_moments(k, degree).items():
                total[a] += m
        return total


def _primitive(normal: Sequence[Fraction], offset: Fraction):
    lcm = 1
    for a in normal:
        lcm = lcm * a.denominator // math.gcd(lcm, a.denominator)
    ints = [int(a * lcm) for a in normal]
    g = 0
    for a in ints:
        g = math.gcd(g, abs(a))
    if g == 0:
        raise PolytopeError("zero facet normal")
    scale = Fraction(lcm, g)
    return tuple(a // g for a in ints), offset * scale, scale != 1


class Polytope:
    """Bounded convex polytope ``{xi : <h_k, xi> - c_k > 0}``.

    Normals are rescaled to primitive integer vectors (offsets rescaled by the
    same factor); ``rescaled`` records whether any input normal was not
    already primitive-integer.
    """

    def __init__(self, normals, offsets, *, vertices=None):
        normals = [[as_fraction(a) for a in row] for row in normals]
        offsets = [as_fraction(c) for c in offsets]
        if not normals or len(normals) != len(offsets):
            raise PolytopeError("need one offset per facet normal")
        n = len(normals[0])
        if n == 0 or any(len(row) != n for row in normals):
            raise PolytopeError("facet normals must share one positive dimension")
        prim, offs, flags = [], [], []
        for row, c in zip(normals, offsets):
            p, c2, flag = _primitive(row, c)
            prim.append(p)
            offs.append(c2)
            flags.append(flag)
        self.dim = n
        self.normals_exact: tuple[tuple[int, ...], ...] = tuple(prim)
        self.offsets_exact: tuple[Fraction, ...] = tuple(offs)
        self.rescaled = any(flags)
        weights = [Fraction(1, sum(a * a for a in p)) for p in prim]
        self.region = Region(prim, offs, weights)
        self._validate()
        if vertices is not None:
            given = sorted(tuple(as_fraction(a) for a in v) for v in vertices)
            if given != self.region.vertices_exact:
                raise PolytopeError("supplied vertices do not match the facet description")

    def _validate(self):
        reg = self.region
        if not reg.vertices_exact:
            raise PolytopeError("polytope is empty or unbounded (no vertices)")
        # bounded iff no nonzero direction d with <h_k, d> >= 0 for every k
        from scipy.optimize import linprog

        H = np.array(self.normals_exact, dtype=float)
        for i in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[i] = -sign
                res = linprog(c, A_ub=-H, b_ub=np.zeros(len(H)), bounds=[(-1, 1)] * self.dim)
                if res.status == 0 and -res.fun > 1e-12:
                    raise PolytopeError("polytope is unbounded")
        if not reg.full_dimensional:
            raise PolytopeError("polytope has empty interior")
        for k in range(len(self.normals_exact)):
            vids = reg.face(k)
            pts = [reg.vertices_exact[i] for i in vids]
            if not pts or _affine_rank(pts) != self.dim - 1:
                raise PolytopeError(f"inequality {k} is redundant (does not define a facet)")
        seen = set()
        for p, c in zip(self.normals_exact, self.offsets_exact):
            if (p, c) in seen:
                raise PolytopeError("duplicate facet inequality")
            seen.add((p, c))

    # -- basic data ---------------------------------------------------------

    @property
    def n_facets(self) -> int:
        return len(self.normals_exact)

    @cached_property
    def normals(self) -> np.ndarray:
        return np.array(self.normals_exact, dtype=float)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([float(c) for c in self.offsets_exact])

    @cached_property
    def vertices_exact(self) -> list[tuple[Fraction, ...]]:
        return self.region.vertices_exact

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.array([[float(a) for a in v] for v in self.vertices_exact])

    @cached_property
    def centroid(self) -> np.ndarray:
        """Vertex centroid (default normalization point)."""
        return self.vertices.mean(axis=0)

    @cached_property
    def volume(self) -> Fraction:
        return self.region.interior_moments(0)[(0,) * self.dim]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, facets={self.n_facets}, vertices={len(self.vertices_exact)})"

    def __eq__(self, other):
        if not isinstance(other, Polytope):
            return NotImplemented
        return (sorted(zip(self.normals_exact, self.offsets_exact))
                == sorted(zip(other.normals_exact, other.offsets_exact)))

    def __hash__(self):
        return hash(tuple(sorted(zip(self.normals_exact, self.offsets_exact))))

    def translate(self, shift) -> "Polytope":
        shift = [as_fraction(s) for s in shift]
        offs = [c + sum(a * s for a, s in zip(p, shift))
                for p, c in zip(self.normals_exact, self.offsets_exact)]
        return Polytope(self.normals_exact, offs)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def num(q: Fraction):
            return q.numerator if q.denominator == 1 else str(q)

        return {
            "dim": self.dim,
            "facets": [{"normal": list(p), "offset": num(c)}
                       for p, c in zip(self.normals_exact, self.offsets_exact)],
            "vertices": [[num(a) for a in v] for v in self.vertices_exact],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        try:
            facets = data["facets"]
            normals = [f["normal"] for f in facets]
            offsets = [f["offset"] for f in facets]
        except (KeyError, TypeError) as exc:
            raise PolytopeError(f"malformed polytope description: missing {exc}") from exc
        if "dim" in data and any(len(nm) != data["dim"] for nm in normals):
            raise PolytopeError("facet normal length disagrees with 'dim'")
        return cls(normals, offsets, vertices=data.get("vertices"))

    @classmethod
    def from_json(cls, path) -> "Polytope":
        with open(path) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PolytopeError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)


def interval() -> Polytope:
    return Polytope([[1], [-1]], [0, -1])


def unit_square() -> Polytope:
    return Polytope([[1, 0], [-1, 0], [0, 1], [0, -1]], [0, -1, 0, -1])


def unit_cube(n: int) -> Polytope:
    normals, offsets = [], []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        normals += [e, [-a for a in e]]
        offsets += [0, -1]
    return Polytope(normals, offsets)


def standard_simplex(n: int = 2) -> Polytope:
    normals = [[1 if j == i else 0 for j in range(n)] for i in range(n)]
    return Polytope(normals + [[-1] * n], [0] * n + [-1])


def delta(poly: Polytope, xi) -> np.ndarray:
    """Facet functions ``delta_k(xi) = <h_k, xi> - c_k``; works on (..., n) arrays."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != poly.dim:
        raise ValueError(f"point dimension {xi.shape[-1]} != polytope dimension {poly.dim}")
    return xi @ poly.normals.T - poly.offsets


def boundary_measure_moments(poly: Polytope, degree: int) -> dict:
    """Exact ``int_{boundary} xi^alpha dsigma`` for ``|alpha| <= degree``."""
    return poly.region.boundary_moments(degree)


def interior_moments(poly: Polytope, degree: int) -> dict:
    """Exact ``int xi^alpha dmu`` for ``|alpha| <= degree``."""
    return poly.region.interior_moments(degree)


def diameter(poly: Polytope) -> float:
    v = poly.vertices
    return float(max(np.linalg.norm(a - b) for a, b in itertools.combinations(v, 2)))


def distance_to_boundary(poly: Polytope, xi) -> np.ndarray:
    """Euclidean distance to the boundary for points inside the polytope."""
    return (delta(poly, xi) / np.linalg.norm(poly.normals, axis=1)).min(axis=-1)


def clip(poly: Polytope, normal, offset) -> Region:
    """``poly`` intersected with ``{<normal, xi> >= offset}``.

    The cut face carries no boundary measure; the surviving parts of the
    original facets keep their lattice weights.
    """
    reg = poly.region
    return Region(list(reg.normals) + [tuple(as_fraction(a) for a in normal)],
                  list(reg.offsets) + [as_fraction(offset)],
                  list(reg.weights) + [None])


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid over the bounding box with node classes.

    Nodes are ``origin + h * index``.  ``kind`` is ``INTERIOR`` where every
    ``delta_k >= margin``, ``EXTERIOR`` outside the closed polytope and
    ``COLLAR`` otherwise.
    """

    poly: Polytope
    h: float
    margin: float
    origin: np.ndarray
    shape: tuple[int, ...]
    kind: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)
    deltas: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def strides(self) -> np.ndarray:
        return np.array([int(np.prod(self.shape[i + 1:])) for i in range(self.dim)])

    @cached_property
    def multi_index(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1)

    def shift(self, offset) -> np.ndarray:
        """Flat index of ``node + offset`` for every node, ``-1`` if off-box."""
        offset = np.asarray(offset, dtype=int)
        idx = self.multi_index + offset
        inside = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.full(self.size, -1, dtype=np.int64)
        out[inside] = idx[inside] @ self.strides
        return out

    def ring_ok(self, mask: np.ndarray) -> np.ndarray:
        """Nodes whose full 3^n neighbourhood lies in ``mask``."""
        ok = mask.copy()
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            j = self.shift(off)
            ok &= (j >= 0) & mask[np.maximum(j, 0)]
        return ok

    @property
    def interior(self) -> np.ndarray:
        return self.kind == INTERIOR

    @property
    def defined(self) -> np.ndarray:
        return self.kind != EXTERIOR

    @cached_property
    def strictly_inside(self) -> np.ndarray:
        return np.all(self.deltas > self._tol, axis=1)

    @property
    def _tol(self) -> float:
        return 1e-12 * max(1.0, float(np.abs(self.poly.offsets).max()))

    def find_node(self, xi, atol: float | None = None) -> int:
        """Flat index of the node at ``xi`` (raises if ``xi`` is not a node)."""
        xi = np.asarray(xi, dtype=float)
        idx = np.rint((xi - self.origin) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise KeyError(f"{xi} is outside the grid box")
        flat = int(idx @ self.strides)
        atol = 1e-9 * self.h if atol is None else atol
        if np.max(np.abs(self.coords[flat] - xi)) > atol:
            raise KeyError(f"{xi} is not a grid node")
        return flat


def make_grid(poly: Polytope, h: float, margin: float | None = None) -> Grid:
    """Grid of spacing ``h`` over the bounding box; ``margin`` defaults to ``2h``."""
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    margin = 2 * h if margin is None else float(margin)
    if margin < h * (1 - 1e-12):
        raise ValueError("margin must be at least h")
    lo, hi = poly.vertices.min(axis=0), poly.vertices.max(axis=0)
    shape = tuple(int(np.floor((b - a) / h + 1e-9)) + 1 for a, b in zip(lo, hi))
    axes = [lo[i] + h * np.arange(shape[i]) for i in range(poly.dim)]
    coords = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    deltas = delta(poly, coords)
    tol = 1e-12 * max(1.0, float(np.abs(poly.offsets).max()))
    kind = np.full(len(coords), COLLAR, dtype=np.int8)
    kind[np.any(deltas < -tol, axis=1)] = EXTERIOR
    kind[np.all(deltas >= margin - tol, axis=1)] = INTERIOR
    if not np.any(kind == INTERIOR):
        raise ValueError(f"h={h} is too coarse: no interior nodes with margin {margin}")
    return Grid(poly, float(h), margin, lo.copy(), shape, kind, coords, deltas)
