"""Guillemin potential ``v = sum_k delta_k log delta_k`` and its derivatives."""

from __future__ import annotations

import itertools

import numpy as np

from .polytope import Polytope, delta


class GuilleminPotential:
    """Guillemin potential of ``poly``, optionally normalized at ``p0``.

    Normalization subtracts the supporting affine function at ``p0`` so the
    result vanishes to first order there; second derivatives are untouched.
    """

    def __init__(self, poly: Polytope, p0=None):
        self.poly = poly
        self.p0 = None if p0 is None else np.asarray(p0, dtype=float)
        self._shift = 0.0
        self._slope = np.zeros(poly.dim)
        if self.p0 is not None:
            val, grad, _ = self._raw(self.p0[None, :])
            self._slope = grad[0]
            self._shift = val[0] - grad[0] @ self.p0

    def normalized(self, p0) -> "GuilleminPotential":
        return GuilleminPotential(self.poly, p0)

    def _raw(self, xi):
        d = delta(self.poly, xi)
        if np.any(d <= 0):
            raise ValueError("Guillemin potential derivatives need strictly interior points")
        H = self.poly.normals
        logd = np.log(d)
        value = np.sum(d * logd, axis=-1)
        grad = (1.0 + logd) @ H
        hess = np.einsum("...k,ki,kj->...ij", 1.0 / d, H, H)
        return value, grad, hess

    def __call__(self, xi):
        """Value on the closed polytope (``0 log 0 = 0`` on facets)."""
        xi = np.asarray(xi, dtype=float)
        d = delta(self.poly, xi)
        if np.any(d < -1e-12):
            raise ValueError("point outside the polytope")
        d = np.clip(d, 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0)), 0.0)
        return terms.sum(axis=-1) - xi @ self._slope - self._shift

    def evaluate(self, xi):
        """``(value, gradient, hessian)`` at strictly interior point(s)."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        pts = xi[None, :] if single else xi
        value, grad, hess = self._raw(pts)
        value = value - pts @ self._slope - self._shift
        grad = grad - self._slope
        if single:
            return value[0], grad[0], hess[0]
        return value, grad, hess

    def hessian(self, xi):
        return self.evaluate(xi)[2]

    def det_hessian(self, xi):
        return np.linalg.det(self.hessian(xi))

    def log_det_split(self, xi):
        """``(log P, -sum log delta_k)`` with ``det(v_ij) = P / prod delta_k``.

        ``P`` is the Cauchy-Binet polynomial ``sum_S det(h_S)^2 prod_{k not in S}
        delta_k``, positive up to the boundary of a simple polytope.
        """
        xi = np.asarray(xi, dtype=float)
        d = delta(self.poly, xi)
        H = self.poly.normals
        K, n = H.shape
        P = np.zeros(d.shape[:-1])
        for S in itertools.combinations(range(K), n):
            w = np.linalg.det(H[list(S)]) ** 2
            if w < 0.5:
                continue
            rest = [k for k in range(K) if k not in S]
            P = P + w * np.prod(d[..., rest], axis=-1)
        return np.log(P), -np.sum(np.log(d), axis=-1)


def v_eval(gp: GuilleminPotential, xi):
    return gp.evaluate(xi)


def _corner_frame(poly: Polytope, corner):
    corner = sorted(set(int(k) for k in corner))
    m, n = len(corner), poly.dim
    if not 1 <= m <= n:
        raise ValueError("corner must name between 1 and n facets")
    H = poly.normals[corner]
    if np.linalg.matrix_rank(H) < m:
        raise ValueError("degenerate facet selection: normals are linearly dependent")
    reg = poly.region
    face = set.intersection(*(set(reg.face(k)) for k in corner))
    if not face:
        raise ValueError("the chosen facets do not meet")
    # the face must be cut out by exactly these facets (simple corner)
    for k in range(poly.n_facets):
        if k not in corner and face <= set(reg.face(k)):
            raise ValueError("non-simple corner: more facets contain this face")
    pts = np.array([poly.vertices[i] for i in face])
    face_dim = np.linalg.matrix_rank(pts[1:] - pts[0]) if len(pts) > 1 else 0
    if face_dim != n - m:
        raise ValueError("the chosen facets do not meet in a codimension-m face")
    rows = list(H)
    for e in np.eye(n):
        if len(rows) == n:
            break
        if np.linalg.matrix_rank(np.array(rows + [e])) > len(rows):
            rows.append(e)
    return corner, np.array(rows)


def corner_det(gp: GuilleminPotential, xi, corner) -> float:
    """``beta(xi) = [det(v_ij) delta_1 ... delta_m]^{-1}`` in corner coordinates.

    Corner coordinates are ``y = T xi + const`` whose first ``m`` entries are
    the chosen facet functions; the Hessian determinant picks up
    ``det(T)^{-2}``.
    """
    corner, T = _corner_frame(gp.poly, corner)
    xi = np.asarray(xi, dtype=float)
    d = delta(gp.poly, xi)
    det_xi = np.linalg.det(gp.hessian(xi))
    det_y = det_xi / np.linalg.det(T) ** 2
    return 1.0 / (det_y * np.prod(d[..., corner], axis=-1))


def det_decay_bound(gp: GuilleminPotential, sample) -> float:
    """``max det(v_ij) d_E(xi, boundary)^n`` over the sample points."""
    pts = np.atleast_2d(np.asarray(sample, dtype=float))
    if gp.poly.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    d = delta(gp.poly, pts)
    dist = (d / np.linalg.norm(gp.poly.normals, axis=1)).min(axis=1)
    dets = np.linalg.det(gp.hessian(pts))
    return float(np.max(dets * dist ** gp.poly.dim))
