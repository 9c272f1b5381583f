"""Grid fields, finite-difference Hessians and the Abreu operator.

A potential is ``u = v + phi + affine`` where ``v`` is the analytic
Guillemin potential (or absent), ``phi`` a grid field differenced with
second-order central stencils, and the affine part never enters any
second derivative.  Node sets:

* *hessian nodes*: the 3^n neighbourhood is defined (and, with a Guillemin
  part, the node is strictly inside) -- ``u_ij`` is available there;
* *core nodes*: the 3^n neighbourhood consists of hessian nodes, so
  ``D^2(u^{ij})`` and other second differences of derived fields exist.
"""

from __future__ import annotations

import csv
import itertools
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .guillemin import GuilleminPotential
from .polytope import Grid, delta, distance_to_boundary


class NotPositiveDefinite(ValueError):
    """The assembled Hessian lost positive definiteness somewhere."""


class StencilError(ValueError):
    """A requested finite-difference stencil leaves the available nodes."""


class GridField:
    """Scalar field on grid nodes; ``mask`` marks where values are meaningful."""

    def __init__(self, grid: Grid, values, mask=None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError(f"expected {grid.size} values, got shape {values.shape}")
        self.grid = grid
        self.mask = grid.defined.copy() if mask is None else np.asarray(mask, dtype=bool)
        self.values = np.where(self.mask, values, np.nan)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("non-finite values on masked nodes")

    @classmethod
    def from_function(cls, grid: Grid, func, mask=None) -> "GridField":
        mask = grid.defined if mask is None else mask
        vals = np.full(grid.size, np.nan)
        vals[mask] = func(grid.coords[mask])
        return cls(grid, vals, mask)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridField":
        return cls(grid, np.zeros(grid.size))

    def _check(self, other):
        if isinstance(other, GridField):
            if other.grid is not self.grid:
                raise ValueError("fields live on different grids")
            return other.values, self.mask & other.mask
        return other, self.mask

    def __add__(self, other):
        v, m = self._check(other)
        return GridField(self.grid, self.values + v, m)

    def __sub__(self, other):
        v, m = self._check(other)
        return GridField(self.grid, self.values - v, m)

    def __mul__(self, other):
        v, m = self._check(other)
        return GridField(self.grid, self.values * v, m)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.values, self.mask)

    def restrict(self, mask) -> "GridField":
        return GridField(self.grid, self.values, self.mask & mask)

    def sup(self, mask=None) -> float:
        m = self.mask if mask is None else self.mask & mask
        if not m.any():
            raise ValueError("empty node set")
        return float(np.max(np.abs(self.values[m])))

    def l2(self, mask=None) -> float:
        m = self.mask if mask is None else self.mask & mask
        return float(np.sqrt(np.sum(self.values[m] ** 2) * self.grid.h ** self.grid.dim))

    def at(self, xi) -> float:
        j = self.grid.find_node(xi)
        if not self.mask[j]:
            raise KeyError(f"field undefined at {xi}")
        return float(self.values[j])

    def sample(self, points) -> np.ndarray:
        """Multilinear interpolation; nearest valid node where a cell is incomplete."""
        g = self.grid
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        t = (pts - g.origin) / g.h
        base = np.clip(np.floor(t).astype(int), 0, np.array(g.shape) - 2 if min(g.shape) > 1 else 0)
        frac = t - base
        out = np.zeros(len(pts))
        ok = np.ones(len(pts), dtype=bool)
        vals = np.where(self.mask, self.values, 0.0)
        for corner in itertools.product((0, 1), repeat=g.dim):
            c = np.asarray(corner)
            idx = base + c
            inbox = np.all(idx < np.array(g.shape), axis=1)
            flat = np.where(inbox, np.minimum(idx, np.array(g.shape) - 1) @ g.strides, 0)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            ok &= inbox & self.mask[flat]
            out += w * vals[flat]
        if not ok.all():
            valid = np.flatnonzero(self.mask)
            from scipy.spatial import cKDTree

            tree = cKDTree(g.coords[valid])
            _, nearest = tree.query(pts[~ok])
            out[~ok] = self.values[valid[nearest]]
        return out

    def to_csv(self, path, extra: dict | None = None):
        """One row per node: coordinates, value, mask (and extra columns)."""
        g = self.grid
        extra = extra or {}
        header = [f"xi_{i + 1}" for i in range(g.dim)] + ["value", "mask"] + list(extra)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j in range(g.size):
                if g.kind[j] == 0:
                    continue
                row = [repr(float(x)) for x in g.coords[j]]
                row += [repr(float(self.values[j])) if self.mask[j] else "nan", int(self.mask[j])]
                row += [repr(float(col[j])) for col in extra.values()]
                w.writerow(row)


# ---------------------------------------------------------------------------
# stencils


def _unit(n, i):
    e = np.zeros(n, dtype=int)
    e[i] = 1
    return e


def stencil_terms(n: int, i: int, j: int | None = None):
    """``(offset, coefficient * h^order)`` pairs for a central difference.

    ``j is None`` gives the first derivative along ``i``; otherwise the
    second derivative ``d^2/dxi_i dxi_j`` (4-point cross when ``i != j``).
    """
    ei = _unit(n, i)
    if j is None:
        return [(ei, 0.5), (-ei, -0.5)]
    if i == j:
        return [(ei, 1.0), (0 * ei, -2.0), (-ei, 1.0)]
    ej = _unit(n, j)
    return [(ei + ej, 0.25), (ei - ej, -0.25), (-ei + ej, -0.25), (-ei - ej, 0.25)]


def apply_stencil(grid: Grid, values: np.ndarray, rows: np.ndarray, i: int, j: int | None = None):
    """Central difference of ``values`` at nodes ``rows`` (flat indices)."""
    order = 1 if j is None else 2
    out = np.zeros(len(rows))
    for off, coef in stencil_terms(grid.dim, i, j):
        nb = _shift_cache(grid, tuple(off))[rows]
        if np.any(nb < 0):
            raise StencilError("stencil leaves the grid box")
        out += coef * values[nb]
    return out / grid.h ** order


def stencil_matrix(grid: Grid, rows_mask: np.ndarray, i: int, j: int | None = None):
    """Sparse ``size x size`` matrix of the central difference on ``rows_mask``."""
    order = 1 if j is None else 2
    rows = np.flatnonzero(rows_mask)
    r, c, v = [], [], []
    for off, coef in stencil_terms(grid.dim, i, j):
        nb = _shift_cache(grid, tuple(off))[rows]
        if np.any(nb < 0):
            raise StencilError("stencil leaves the grid box")
        r.append(rows)
        c.append(nb)
        v.append(np.full(len(rows), coef / grid.h ** order))
    return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                         shape=(grid.size, grid.size))


_SHIFTS: dict = {}


def _shift_cache(grid: Grid, off: tuple) -> np.ndarray:
    key = (id(grid), off)
    hit = _SHIFTS.get(key)
    if hit is None or hit[0] is not grid:
        hit = (grid, grid.shift(off))
        _SHIFTS[key] = hit
    return hit[1]


def subdomain(grid: Grid, min_dist: float) -> np.ndarray:
    """Nodes at Euclidean distance ``>= min_dist`` from the boundary."""
    return distance_to_boundary(grid.poly, grid.coords) >= min_dist - 1e-12


# ---------------------------------------------------------------------------
# potentials


class Potential:
    """``u = v + phi + (c + <g, xi>)`` on a grid.

    ``phi`` must be defined on every non-exterior node.  ``guillemin=None``
    gives a purely discrete potential (``u = phi + affine``).  ``active``
    optionally restricts the nodes where Hessians are formed.
    """

    def __init__(self, grid: Grid, phi=None, guillemin: GuilleminPotential | None = None,
                 affine=None, *, active=None, check: bool = True):
        self.grid = grid
        self.active = None if active is None else np.asarray(active, dtype=bool)
        if phi is None:
            phi = GridField.zeros(grid)
        elif not isinstance(phi, GridField):
            phi = GridField(grid, phi)
        if phi.grid is not grid:
            raise ValueError("correction field lives on another grid")
        if not np.all(phi.mask[grid.defined]):
            raise ValueError("correction must be defined on every non-exterior node")
        self.phi = phi
        self.gp = guillemin
        if affine is None:
            affine = (0.0, np.zeros(grid.dim))
        self.affine = (float(affine[0]), np.asarray(affine[1], dtype=float))
        if check:
            self.inverse_hessians  # raises NotPositiveDefinite if invalid

    @classmethod
    def guillemin(cls, grid: Grid, phi=None, p0=None, **kw) -> "Potential":
        return cls(grid, phi, GuilleminPotential(grid.poly, p0), **kw)

    @classmethod
    def from_function(cls, grid: Grid, func, guillemin=None, **kw) -> "Potential":
        return cls(grid, GridField.from_function(grid, func), guillemin, **kw)

    @classmethod
    def discrete_guillemin(cls, grid: Grid, **kw) -> "Potential":
        """The Guillemin potential sampled on the grid and differenced like ``phi``."""
        gp = GuilleminPotential(grid.poly)
        return cls.from_function(grid, gp, None, **kw)

    def with_phi(self, phi, check: bool = True) -> "Potential":
        return Potential(self.grid, phi, self.gp, self.affine, active=self.active, check=check)

    def add_affine(self, const, grad) -> "Potential":
        c, g = self.affine
        return Potential(self.grid, self.phi, self.gp,
                         (c + float(const), g + np.asarray(grad, dtype=float)),
                         active=self.active, check=False)

    # -- node sets ----------------------------------------------------------

    @cached_property
    def hessian_mask(self) -> np.ndarray:
        g = self.grid
        base = g.defined & g.strictly_inside if self.gp is not None else g.defined
        mask = g.ring_ok(g.defined) & base
        return mask if self.active is None else mask & self.active

    @cached_property
    def core_mask(self) -> np.ndarray:
        return self.grid.ring_ok(self.hessian_mask)

    # -- values and derivatives -----------------------------------------------

    @cached_property
    def values(self) -> np.ndarray:
        g = self.grid
        out = np.full(g.size, np.nan)
        m = g.defined
        x = g.coords[m]
        vv = self.gp(x) if self.gp is not None else 0.0
        out[m] = vv + self.phi.values[m] + self.affine[0] + x @ self.affine[1]
        return out

    def value_field(self) -> GridField:
        return GridField(self.grid, self.values)

    @cached_property
    def hessians(self) -> np.ndarray:
        """``(size, n, n)`` array of ``u_ij``; NaN off the hessian nodes."""
        g, n = self.grid, self.grid.dim
        rows = np.flatnonzero(self.hessian_mask)
        H = np.full((g.size, n, n), np.nan)
        Hr = np.zeros((len(rows), n, n))
        phi = self.phi.values
        for i in range(n):
            for j in range(i, n):
                d = apply_stencil(g, phi, rows, i, j)
                Hr[:, i, j] = d
                Hr[:, j, i] = d
        if self.gp is not None:
            Hr += self.gp.hessian(g.coords[rows])
        H[rows] = Hr
        return H

    @cached_property
    def min_eigenvalue(self) -> float:
        Hr = self.hessians[self.hessian_mask]
        return float(np.min(np.linalg.eigvalsh(Hr)))

    @cached_property
    def inverse_hessians(self) -> np.ndarray:
        """``(size, n, n)`` array of ``u^{ij}``; NaN off the hessian nodes."""
        m = self.hessian_mask
        Hr = self.hessians[m]
        lam = np.linalg.eigvalsh(Hr)
        bad = lam[:, 0] <= 0
        if np.any(bad):
            where = self.grid.coords[np.flatnonzero(m)[bad][0]]
            raise NotPositiveDefinite(f"Hessian not positive definite near xi={where}")
        W = np.full_like(self.hessians, np.nan)
        W[m] = np.linalg.inv(Hr)
        return W

    @cached_property
    def dets(self) -> np.ndarray:
        out = np.full(self.grid.size, np.nan)
        m = self.hessian_mask
        out[m] = np.linalg.det(self.hessians[m])
        return out

    def gradient(self, mask=None) -> np.ndarray:
        """``(size, n)`` gradient on ``mask`` (default: core nodes)."""
        g, n = self.grid, self.grid.dim
        mask = self.core_mask if mask is None else mask
        rows = np.flatnonzero(mask)
        G = np.full((g.size, n), np.nan)
        Gr = np.zeros((len(rows), n))
        for i in range(n):
            Gr[:, i] = apply_stencil(g, self.phi.values, rows, i)
        if self.gp is not None:
            Gr += self.gp.evaluate(g.coords[rows])[1]
        G[rows] = Gr + self.affine[1]
        return G

    def hessian(self, node) -> np.ndarray:
        """``u_ij`` at one node (flat index or coordinates)."""
        j = node if isinstance(node, (int, np.integer)) else self.grid.find_node(node)
        if not self.hessian_mask[j]:
            raise StencilError("second-difference stencil incomplete at this node")
        return self.hessians[j].copy()

    def hessian_at(self, points) -> np.ndarray:
        """``u_ij`` off the grid: analytic ``v_ij`` plus interpolated ``phi_ij``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g, n = self.grid, self.grid.dim
        H = self.hessians.copy()
        if self.gp is not None:
            rows = np.flatnonzero(self.hessian_mask)
            H[rows] -= self.gp.hessian(g.coords[rows])
        out = np.empty((len(pts), n, n))
        for i in range(n):
            for j in range(n):
                out[:, i, j] = GridField(g, H[:, i, j], self.hessian_mask).sample(pts)
        if self.gp is not None:
            out += self.gp.hessian(pts)
        return out

    def __call__(self, points) -> np.ndarray:
        """Continuous evaluation: analytic ``v`` plus interpolated ``phi``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.phi.sample(pts) + self.affine[0] + pts @ self.affine[1]
        if self.gp is not None:
            out = out + self.gp(pts)
        return out

    def value_and_gradient_at(self, p0):
        """Value and gradient at ``p0`` (node values, else interpolated)."""
        p0 = np.asarray(p0, dtype=float)
        try:
            j = self.grid.find_node(p0)
        except KeyError:
            j = None
        if j is not None and self.core_mask[j]:
            return float(self.values[j]), self.gradient()[j]
        core = self.core_mask
        G = self.gradient()
        val = float(GridField(self.grid, self.values).sample(p0[None])[0])
        grad = np.array([GridField(self.grid, np.nan_to_num(G[:, i]), core).sample(p0[None])[0]
                         for i in range(self.grid.dim)])
        return val, grad

    def normalize(self, p0) -> "Potential":
        """Subtract the supporting affine function at ``p0``."""
        p0 = np.asarray(p0, dtype=float)
        if np.any(delta(self.grid.poly, p0) <= 0):
            raise ValueError("normalization point must be interior")
        val, grad = self.value_and_gradient_at(p0)
        return self.add_affine(-(val - grad @ p0), -grad)


# ---------------------------------------------------------------------------
# operators


def hessian(u: Potential, node) -> np.ndarray:
    return u.hessian(node)


def _second_divergence(u: Potential, W: np.ndarray, rows: np.ndarray) -> np.ndarray:
    g, n = u.grid, u.grid.dim
    out = np.zeros(len(rows))
    for i in range(n):
        for j in range(i, n):
            w = np.nan_to_num(W[:, i, j])
            d = apply_stencil(g, w, rows, i, j)
            out += d if i == j else 2.0 * d
    return out


def abreu_operator(u: Potential) -> GridField:
    """``sum_ij D_ij(u^{ij})`` on core nodes."""
    rows = np.flatnonzero(u.core_mask)
    vals = np.full(u.grid.size, np.nan)
    vals[rows] = _second_divergence(u, u.inverse_hessians, rows)
    return GridField(u.grid, vals, u.core_mask)


class MetricQuantities:
    """``rho = det(u_ij)^{1/(n+2)}`` and ``Phi = |grad rho|_G^2 / rho^2``."""

    def __init__(self, u: Potential):
        self.u = u
        g, n = u.grid, u.grid.dim
        W = u.inverse_hessians
        hm, core = u.hessian_mask, u.core_mask
        rho = np.full(g.size, np.nan)
        rho[hm] = u.dets[hm] ** (1.0 / (n + 2))
        self.rho = GridField(g, rho, hm)
        rows = np.flatnonzero(core)
        grad = np.full((g.size, n), np.nan)
        r0 = np.nan_to_num(rho)
        for i in range(n):
            grad[rows, i] = apply_stencil(g, r0, rows, i)
        self.grad_rho = grad
        norm2 = np.full(g.size, np.nan)
        norm2[rows] = np.einsum("ki,kij,kj->k", grad[rows], W[rows], grad[rows])
        self.grad_rho_norm2 = GridField(g, norm2, core)
        self.Phi = GridField(g, norm2 / rho ** 2, core)
        self.inverse_hessians = W


def metric_quantities(u: Potential) -> MetricQuantities:
    return MetricQuantities(u)


def laplace_beltrami(u: Potential, g: GridField, mq: MetricQuantities | None = None) -> GridField:
    """Laplace-Beltrami of ``G_u`` in xi-coordinates on core nodes where ``g`` is differenceable."""
    grid, n = u.grid, u.grid.dim
    mq = metric_quantities(u) if mq is None else mq
    target = u.core_mask & grid.ring_ok(g.mask)
    rows = np.flatnonzero(target)
    W = mq.inverse_hessians[rows]
    gv = np.nan_to_num(g.values)
    second = np.zeros((len(rows), n, n))
    first = np.zeros((len(rows), n))
    for i in range(n):
        first[:, i] = apply_stencil(grid, gv, rows, i)
        for j in range(i, n):
            d = apply_stencil(grid, gv, rows, i, j)
            second[:, i, j] = second[:, j, i] = d
    rho = mq.rho.values[rows]
    drho = mq.grad_rho[rows]
    lap = (np.einsum("kij,kij->k", W, second)
           - (n + 2) / (2 * rho) * np.einsum("kij,kj,ki->k", W, drho, first))
    vals = np.full(grid.size, np.nan)
    vals[rows] = lap
    return GridField(grid, vals, target)


def _eval_A(A, pts):
    if callable(A):
        return np.asarray(A(pts), dtype=float) * np.ones(len(pts))
    return np.full(len(pts), float(A))


def rho_residual(u: Potential, A) -> GridField:
    """``Delta rho - (n+4)/2 |grad rho|^2/rho - rho A/(n+2)`` on core nodes."""
    n = u.grid.dim
    mq = metric_quantities(u)
    lap = laplace_beltrami(u, mq.rho, mq)
    m = lap.mask
    rho = mq.rho.values
    vals = np.full(u.grid.size, np.nan)
    Av = _eval_A(A, u.grid.coords[m])
    vals[m] = (lap.values[m] - 0.5 * (n + 4) * mq.grad_rho_norm2.values[m] / rho[m]
               - rho[m] * Av / (n + 2))
    return GridField(u.grid, vals, m)
