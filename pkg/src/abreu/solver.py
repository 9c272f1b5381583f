"""Solve Abreu's equation for the correction ``phi`` in ``u = v + phi``.

Two collar closures are available.  ``collar="frozen"`` keeps ``phi`` at its
initial value off the core nodes, which pins the affine gauge.
``collar="extrapolate"`` instead ties every non-core node to the core by
quadratic extrapolation along an inward grid line, so ``phi`` stays smooth up
to the boundary; the affine gauge is then fixed by bordering the Newton
system with the affine functions.  Each step moves
along the residual ``r = Op(u) + A``; with ``method="newton"`` the residual
is first preconditioned by the inverse linearization of the operator, with
``method="flow"`` it is used as is (explicit flow, ``tau = O(h^4)``).  A
step is accepted only if the sup-norm residual drops and the Hessian stays
above the positive-definiteness floor; otherwise ``tau`` is cut back.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field_calculus import (GridField, NotPositiveDefinite, Potential, abreu_operator,
                             stencil_matrix)
from .functionals import L_A, F_A, as_curvature, norm_b
from .polytope import Polytope, make_grid


@dataclass
class SolveConfig:
    h: float = 1 / 64
    margin: float | None = None
    tau0: float | None = None
    max_iters: int = 50
    tol: float = 1e-6
    backtrack: float = 0.5
    eps_pd: float = 1e-8
    seed: int | None = None
    method: str = "newton"
    min_tau: float = 1e-12
    collar: str = "extrapolate"

    def initial_tau(self) -> float:
        if self.tau0 is not None:
            return self.tau0
        return 1.0 if self.method == "newton" else 0.1 * self.h ** 4


@dataclass
class SolveReport:
    status: str
    iterations: int
    sup_residual: float
    l2_residual: float
    residual_history: list
    tau_history: dict
    min_eigenvalue: float
    det_range: tuple
    F_A: float
    L_A: float
    norm_b: float
    energy_gap: float
    wall_clock: float
    notes: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path):
        _atomic_write(path, dump_json(self.to_dict()))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return float(x)


def _finite(obj):
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dump_json(obj) -> str:
    """JSON text with non-finite floats written as ``null``."""
    return json.dumps(_finite(obj), indent=2, default=_json_default)


def _atomic_write(path, text: str):
    import os
    import tempfile

    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def residual(u: Potential, A) -> GridField:
    """``Op(u) + A`` on core nodes."""
    A = as_curvature(A, u.grid.poly)
    op = abreu_operator(u)
    m = op.mask
    vals = np.full(u.grid.size, np.nan)
    vals[m] = op.values[m] + A(u.grid.coords[m])
    return GridField(u.grid, vals, m)


def linearization(u: Potential, unknowns: np.ndarray) -> sp.csr_matrix:
    """Jacobian of the core residual with respect to ``phi`` on ``unknowns``.

    ``d(u^{kl}) = -u^{ki} d(u_ij) u^{jl}`` chained through the second
    differences on both sides.
    """
    g, n = u.grid, u.grid.dim
    core, hm = u.core_mask, u.hessian_mask
    W = np.nan_to_num(u.inverse_hessians[hm])
    rows, hcols, ucols = np.flatnonzero(core), np.flatnonzero(hm), np.flatnonzero(unknowns)
    S = {}
    for i in range(n):
        for j in range(n):
            S[i, j] = stencil_matrix(g, hm, i, j)[hcols][:, ucols]
    J = sp.csr_matrix((len(rows), len(ucols)))
    for k in range(n):
        for l in range(n):
            T = stencil_matrix(g, core, k, l)[rows][:, hcols]
            inner = sp.csr_matrix((len(hcols), len(ucols)))
            for i in range(n):
                for j in range(n):
                    inner = inner + sp.diags(W[:, k, i] * W[:, l, j]) @ S[i, j]
            J = J - T @ inner
    return J.tocsc()


def _stencil_support(u: Potential) -> np.ndarray:
    """Nodes whose ``phi`` value enters some Hessian."""
    g, hm = u.grid, u.hessian_mask
    hit = np.zeros(g.size, dtype=bool)
    for i in range(g.dim):
        for j in range(i, g.dim):
            S = stencil_matrix(g, hm, i, j).tocsc()
            hit |= np.diff(S.indptr) > 0
    return hit & g.defined


def inward_steps(grid) -> np.ndarray:
    """Per node, the step in ``{-1,0,1}^n`` whose third multiple lands deepest.

    Depth is the Euclidean distance to the boundary; ties go to the shorter step.
    """
    cand = np.array([c for c in itertools.product((-1, 0, 1), repeat=grid.dim) if any(c)])
    cand = cand[np.argsort(np.abs(cand).sum(axis=1), kind="stable")]
    scale = np.linalg.norm(grid.poly.normals, axis=1)
    H, c = grid.poly.normals, grid.poly.offsets
    best = np.full(grid.size, -np.inf)
    steps = np.zeros((grid.size, grid.dim), dtype=int)
    for s in cand:
        far = grid.coords + 3 * grid.h * s
        depth = ((far @ H.T - c) / scale).min(axis=1)
        better = depth > best + 1e-12 * grid.h
        best[better] = depth[better]
        steps[better] = s
    return steps


def extrapolation_rows(grid, targets: np.ndarray, unknowns: np.ndarray) -> sp.csr_matrix:
    """Rows ``phi_x - 3 phi_{x+s} + 3 phi_{x+2s} - phi_{x+3s}`` for ``targets``.

    Columns index the flat positions in ``unknowns``; the rule is exact for
    quadratics, so affine functions lie in its kernel.
    """
    col = np.full(grid.size, -1)
    ucols = np.flatnonzero(unknowns)
    col[ucols] = np.arange(len(ucols))
    steps = inward_steps(grid)
    mi = grid.multi_index
    shape = np.array(grid.shape)
    rows, cols, vals = [], [], []
    for r, x in enumerate(np.flatnonzero(targets)):
        s = steps[x]
        pts = [x]
        for k in (1, 2, 3):
            m = mi[x] + k * s
            if np.any(m < 0) or np.any(m >= shape):
                raise ValueError(f"no inward extrapolation line at node {grid.coords[x]}")
            pts.append(int(m @ grid.strides))
        if np.any(col[pts] < 0):
            raise ValueError(f"extrapolation line leaves the polytope at {grid.coords[x]}")
        rows += [r] * 4
        cols += list(col[pts])
        vals += [1.0, -3.0, 3.0, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(int(targets.sum()), len(ucols)))


def smooth_random_field(grid, amplitude: float, seed: int = 0, modes: int = 3) -> GridField:
    """Low-frequency random trigonometric field with sup-norm ``amplitude``."""
    rng = np.random.default_rng(seed)
    lo = grid.poly.vertices.min(axis=0)
    span = grid.poly.vertices.max(axis=0) - lo
    x = (grid.coords - lo) / span
    vals = np.zeros(grid.size)
    for k in np.ndindex(*([modes] * grid.dim)):
        phase = rng.uniform(0, 2 * np.pi)
        vals += rng.normal() * np.cos(np.pi * (x @ (np.array(k) + 1)) + phase)
    m = grid.defined
    vals *= amplitude / np.max(np.abs(vals[m]))
    return GridField(grid, vals)


def solve(poly: Polytope, A, config: SolveConfig = SolveConfig(), phi0=None, p0=None):
    """Drive ``Op(u) + A`` to zero; returns ``(potential, report)``."""
    t_start = time.perf_counter()
    A = as_curvature(A, poly)
    grid = make_grid(poly, config.h, config.margin)
    if phi0 is None:
        phi0 = GridField.zeros(grid)
    elif callable(phi0) and not isinstance(phi0, GridField):
        phi0 = GridField.from_function(grid, phi0)
    elif not isinstance(phi0, GridField):
        phi0 = GridField(grid, phi0)
    if phi0.grid is not grid:
        phi0 = GridField(grid, phi0.values, phi0.mask)
    u = Potential.guillemin(grid, phi0, check=False)
    try:
        u.inverse_hessians
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"initial potential is not convex: {exc}") from exc
    if u.min_eigenvalue < config.eps_pd:
        raise NotPositiveDefinite("initial Hessian violates the positive-definiteness floor")
    if config.method not in ("newton", "flow"):
        raise ValueError(f"unknown method {config.method!r}")
    if config.collar not in ("frozen", "extrapolate"):
        raise ValueError(f"unknown collar closure {config.collar!r}")
    extrapolate = config.collar == "extrapolate"
    if extrapolate and config.method == "flow":
        raise ValueError("the explicit flow only supports the frozen collar")
    if extrapolate:
        unknowns = _stencil_support(u) | u.core_mask
        E = extrapolation_rows(grid, unknowns & ~u.core_mask, unknowns)
        idx = np.flatnonzero(unknowns)
        G = sp.csc_matrix(np.hstack([np.ones((len(idx), 1)), grid.coords[idx]]))
    else:
        unknowns = u.core_mask.copy()
        idx = np.flatnonzero(unknowns)
        E = None

    def merit(cand, r):
        m = r.sup()
        if E is not None:
            m = max(m, float(np.max(np.abs(E @ cand.phi.values[idx]), initial=0.0)))
        return m

    r = residual(u, A)
    sup = merit(u, r)
    history, taus = [sup], []
    tau = config.initial_tau()
    status, it = "max-iterations", 0
    min_eig = u.min_eigenvalue
    for it in range(1, config.max_iters + 1):
        if sup < config.tol:
            status, it = "converged", it - 1
            break
        if config.method == "flow":
            step = r.values[idx]
        elif E is None:
            step = spla.spsolve(linearization(u, unknowns), -r.values[u.core_mask])
        else:
            J = linearization(u, unknowns)
            M = sp.bmat([[sp.vstack([J, E]), G], [G.T, None]], format="csc")
            rhs = np.concatenate([-r.values[u.core_mask], -(E @ u.phi.values[idx]),
                                  np.zeros(G.shape[1])])
            step = spla.spsolve(M, rhs)[: len(idx)]
        if not np.all(np.isfinite(step)):
            status = "stalled"
            break
        accepted = False
        tau = min(tau / config.backtrack, config.initial_tau()) if taus else tau
        while tau >= config.min_tau:
            trial = u.phi.values.copy()
            trial[idx] += tau * step
            cand = u.with_phi(GridField(grid, trial), check=False)
            try:
                cand.inverse_hessians
                ok = cand.min_eigenvalue >= config.eps_pd
            except NotPositiveDefinite:
                ok = False
            if ok:
                r_new = residual(cand, A)
                m_new = merit(cand, r_new)
                if m_new < sup:
                    u, r, sup = cand, r_new, m_new
                    min_eig = min(min_eig, u.min_eigenvalue)
                    accepted = True
                    break
            tau *= config.backtrack
        taus.append(tau)
        history.append(sup)
        if not accepted:
            status = "stalled"
            break
    else:
        if sup < config.tol:
            status = "converged"
    report = _report(poly, A, u, r, status, it, history, taus, min_eig,
                     time.perf_counter() - t_start, p0, config.collar)
    return u, report


def _report(poly, A, u, r, status, it, history, taus, min_eig, elapsed, p0, collar):
    note = ("phi frozen at its initial value off the core nodes" if collar == "frozen"
            else "phi extrapolated quadratically from the core onto the collar")
    dets = u.dets[u.core_mask]
    la = L_A(poly, A, u, u.grid.h)
    p0 = poly.centroid if p0 is None else np.asarray(p0, dtype=float)
    try:
        nb = norm_b(poly, u.normalize(p0), u.grid.h)
    except (ValueError, KeyError):
        nb = float("nan")
    tau_summary = {"first": taus[0] if taus else None, "last": taus[-1] if taus else None,
                   "min": min(taus) if taus else None, "steps": len(taus)}
    return SolveReport(
        status=status, iterations=it, sup_residual=r.sup(), l2_residual=r.l2(),
        residual_history=[float(x) for x in history], tau_history=tau_summary,
        min_eigenvalue=float(min_eig), det_range=(float(dets.min()), float(dets.max())),
        F_A=F_A(poly, A, u), L_A=la, norm_b=nb,
        energy_gap=abs(la - poly.dim * float(poly.volume)), wall_clock=elapsed,
        notes=[note, "boundary trace of phi by nearest-node extrapolation"])


def write_solution_csv(path, u: Potential, r: GridField, footer: dict | None = None):
    """Rows ``xi_1..xi_n, phi, u, det, residual`` for every defined node."""
    import io

    g = u.grid
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow([f"xi_{i + 1}" for i in range(g.dim)] + ["phi", "u", "det", "residual"])
    fmt = lambda x: "nan" if not np.isfinite(x) else f"{x:.17g}"
    for j in np.flatnonzero(g.defined):
        w.writerow([fmt(x) for x in g.coords[j]]
                   + [fmt(u.phi.values[j]), fmt(u.values[j]), fmt(u.dets[j]), fmt(r.values[j])])
    for key, val in (footer or {}).items():
        buf.write(f"# {key}: {json.dumps(val, default=_json_default)}\n")
    _atomic_write(path, buf.getvalue())
