"""Legendre transform of a grid potential, evaluated at pushed-forward samples.

There is no x-space grid.  Each core node ``xi`` yields one sample with
``x = grad u(xi)``, ``f = <x, xi> - u(xi)`` and ``Hess f = (Hess u)^{-1}``;
x-derivatives are rewritten as ``u^{ij}``-contracted xi-derivatives.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field_calculus import GridField, NotPositiveDefinite, Potential, apply_stencil
from .functionals import as_curvature


@dataclass
class DualSamples:
    """Structure-of-arrays view of the samples; ``nodes`` are flat grid indices."""

    nodes: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    f: np.ndarray
    hess_f: np.ndarray
    hess_u: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, k):
        return {"xi": self.xi[k], "x": self.x[k], "f": self.f[k], "hess_f": self.hess_f[k]}

    @property
    def det_f(self) -> np.ndarray:
        return np.linalg.det(self.hess_f)

    def identity_defect(self) -> np.ndarray:
        """``f + u - <x, xi>`` per sample; zero by construction."""
        return self.f + self.u - np.einsum("ki,ki->k", self.x, self.xi)

    def det_duality(self) -> np.ndarray:
        """``det(Hess f) det(Hess u) - 1`` per sample."""
        return self.det_f * np.linalg.det(self.hess_u) - 1.0

    def monotonicity_min(self, pairs: int = 2000, seed: int = 0) -> float:
        """Smallest ``<x1-x2, xi1-xi2> / |xi1-xi2|^2`` over random sample pairs."""
        rng = np.random.default_rng(seed)
        m = len(self)
        a, b = rng.integers(0, m, pairs), rng.integers(0, m, pairs)
        keep = a != b
        dxi = self.xi[a[keep]] - self.xi[b[keep]]
        dx = self.x[a[keep]] - self.x[b[keep]]
        return float(np.min(np.einsum("ki,ki->k", dx, dxi) / np.einsum("ki,ki->k", dxi, dxi)))

    def to_csv(self, path=None) -> str:
        n = self.xi.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow([f"xi_{i + 1}" for i in range(n)] + [f"x_{i + 1}" for i in range(n)]
                   + ["f", "det_hess_f"])
        for k in range(len(self)):
            w.writerow([f"{v:.17g}" for v in (*self.xi[k], *self.x[k], self.f[k], self.det_f[k])])
        text = buf.getvalue()
        if path is not None:
            from .solver import _atomic_write

            _atomic_write(path, text)
        return text


def to_dual(u: Potential, dup_tol: float = 1e-12) -> DualSamples:
    """One sample per core node."""
    core = u.core_mask
    nodes = np.flatnonzero(core)
    if len(nodes) == 0:
        raise ValueError("no core nodes")
    H = u.hessians[nodes]
    if np.any(np.linalg.eigvalsh(H)[:, 0] <= 0):
        raise NotPositiveDefinite("Hessian not positive definite at some core node")
    xi = u.grid.coords[nodes]
    x = u.gradient(core)[nodes]
    uv = u.values[nodes]
    f = np.einsum("ki,ki->k", x, xi) - uv
    if len(nodes) > 1:
        d, _ = cKDTree(x).query(x, k=2)
        if np.min(d[:, 1]) <= dup_tol * max(1.0, float(np.abs(x).max())):
            raise NotPositiveDefinite("duplicate gradient images: convexity failure")
    return DualSamples(nodes, xi, x, f, np.linalg.inv(H), H, uv)


def _node_field(u: Potential, samples: DualSamples, values) -> GridField:
    vals = np.full(u.grid.size, np.nan)
    vals[samples.nodes] = values
    mask = np.zeros(u.grid.size, dtype=bool)
    mask[samples.nodes] = True
    return GridField(u.grid, vals, mask)


def involution_check(u: Potential, samples: DualSamples | None = None, region=None) -> float:
    """Max ``|grad_x f - xi|`` where ``grad_x f = u^{ij} D_j f``.

    ``D_j f`` are central differences of the dual values on the grid, so the
    error is zero for quadratics and ``O(h^2)`` otherwise.  ``region`` is an
    optional node mask restricting the maximum.
    """
    samples = to_dual(u) if samples is None else samples
    g = u.grid
    fld = _node_field(u, samples, samples.f)
    target = g.ring_ok(fld.mask)
    if region is not None:
        target &= region
    rows = np.flatnonzero(target)
    if len(rows) == 0:
        raise ValueError("no samples with a complete dual stencil")
    Df = np.stack([apply_stencil(g, np.nan_to_num(fld.values), rows, i) for i in range(g.dim)],
                  axis=1)
    W = u.inverse_hessians[rows]
    rec = np.einsum("kij,kj->ki", W, Df)
    return float(np.max(np.abs(rec - g.coords[rows])))


def dual_residual(u: Potential, A) -> GridField:
    """``f^{ij} d_ij(log det f_kl) + A`` rewritten in xi-coordinates.

    With ``L = -log det u_ij`` this is ``u^{kl} L_kl + (d_i u^{ik}) L_k + A``,
    evaluated on core nodes.
    """
    g, n = u.grid, u.grid.dim
    A = as_curvature(A, g.poly)
    hm, core = u.hessian_mask, u.core_mask
    W = u.inverse_hessians
    L = np.full(g.size, np.nan)
    L[hm] = -np.log(u.dets[hm])
    L0, W0 = np.nan_to_num(L), np.nan_to_num(W)
    rows = np.flatnonzero(core)
    Wr = W[rows]
    acc = np.zeros(len(rows))
    for k in range(n):
        Lk = apply_stencil(g, L0, rows, k)
        div = sum(apply_stencil(g, W0[:, i, k], rows, i) for i in range(n))
        acc += div * Lk
        for l in range(n):
            acc += Wr[:, k, l] * apply_stencil(g, L0, rows, k, l)
    vals = np.full(g.size, np.nan)
    vals[rows] = acc + A(g.coords[rows])
    return GridField(g, vals, core)
