"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 solver did not converge,
3 stability violated (or, for ``verify``, a checked estimate failed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import polytope as _poly
from .diagnostics import estimate_report
from .field_calculus import NotPositiveDefinite
from .functionals import CurvatureSpec, balanced_affine
from .legendre import to_dual
from .polytope import Polytope, PolytopeError
from .solver import (SolveConfig, _atomic_write, dump_json, residual, smooth_random_field, solve,
                     write_solution_csv)
from .stability import CreaseFamily, estimate_lambda

EXIT_OK, EXIT_INPUT, EXIT_STALL, EXIT_VIOLATED = 0, 1, 2, 3

BUILTIN = {
    "interval": _poly.interval,
    "square": _poly.unit_square,
    "simplex2": lambda: _poly.standard_simplex(2),
    "simplex3": lambda: _poly.standard_simplex(3),
    "cube3": lambda: _poly.unit_cube(3),
}


class InputError(Exception):
    pass


def load_polytope(arg: str) -> Polytope:
    if arg in BUILTIN:
        return BUILTIN[arg]()
    if not os.path.exists(arg):
        raise InputError(f"{arg}: no such polytope file (built-ins: {', '.join(BUILTIN)})")
    return Polytope.from_json(arg)


def parse_point(text: str | None, n: int):
    if text is None:
        return None
    try:
        p = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise InputError(f"--p0: {exc}") from exc
    if len(p) != n:
        raise InputError(f"--p0 needs {n} coordinates")
    return p


def _positive(kind):
    def conv(text):
        val = kind(text)
        if val <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return conv


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not solver stalls
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abreu", description="Abreu's equation on convex polytopes")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, curvature=True):
        sp.add_argument("--polytope", required=True, help="JSON file or built-in name")
        if curvature:
            sp.add_argument("--A", default="balanced-affine",
                            help="balanced-affine, const:V, affine:a0,..,an, JSON or path")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    def solving(sp):
        sp.add_argument("--h", type=_positive(float), default=1 / 64)
        sp.add_argument("--margin", type=_positive(float), default=None)
        sp.add_argument("--tol", type=_positive(float), default=1e-6)
        sp.add_argument("--max-iters", type=_positive(int), default=50)
        sp.add_argument("--tau0", type=_positive(float), default=None)
        sp.add_argument("--seed", type=int, default=None,
                        help="start from a smooth random perturbation of size 1e-3")
        sp.add_argument("--method", choices=("newton", "flow"), default="newton")
        sp.add_argument("--collar", choices=("extrapolate", "frozen"), default="extrapolate")
        sp.add_argument("--p0", default=None, help="normalization point x,y,...")

    def family(sp):
        sp.add_argument("--directions", type=_positive(int), default=8)
        sp.add_argument("--offsets", type=_positive(int), default=16)

    s = sub.add_parser("solve", help="solve and write sol.csv + report.json")
    common(s); solving(s)
    s = sub.add_parser("stability", help="crease-family stability audit")
    common(s); family(s)
    s = sub.add_parser("verify", help="solve, then check the explicit estimates")
    common(s); solving(s); family(s)
    s.add_argument("--C", type=_positive(float), default=None, help="section level")
    s.add_argument("--d", type=_positive(float), default=1.0)
    s.add_argument("--c", type=_positive(float), default=1.0)
    s = sub.add_parser("balanced-a", help="print the balanced affine A")
    common(s, curvature=False)
    s = sub.add_parser("dualize", help="solve, then write dual samples")
    common(s); solving(s)
    return p


def _config(args) -> SolveConfig:
    return SolveConfig(h=args.h, margin=args.margin, tau0=args.tau0, max_iters=args.max_iters,
                       tol=args.tol, seed=args.seed, method=args.method, collar=args.collar)


def _solve(args, poly, A):
    cfg = _config(args)
    phi0 = None
    if args.seed is not None:
        phi0 = smooth_random_field(_poly.make_grid(poly, cfg.h, cfg.margin), 1e-3, args.seed)
    p0 = parse_point(args.p0, poly.dim)
    u, rep = solve(poly, A, cfg, phi0=phi0, p0=p0)
    if args.verbose:
        for k, r in enumerate(rep.residual_history):
            print(f"iteration {k}: merit {r:.6e}", file=sys.stderr)
        print(f"wall clock {rep.wall_clock:.3f}s", file=sys.stderr)
    return u, rep, p0


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_solve(args, poly, A) -> int:
    u, rep, _ = _solve(args, poly, A)
    out = _outdir(args)
    write_solution_csv(os.path.join(out, "sol.csv"), u, residual(u, A),
                       {"status": rep.status, "sup_residual": rep.sup_residual})
    rep.to_json(os.path.join(out, "report.json"))
    print(f"{rep.status}: {rep.iterations} iterations, sup residual {rep.sup_residual:.3e}")
    return EXIT_OK if rep.converged else EXIT_STALL


def cmd_stability(args, poly, A) -> int:
    rep = estimate_lambda(poly, A, CreaseFamily(args.directions, args.offsets))
    text = dump_json(rep.to_dict())
    if args.out:
        _atomic_write(os.path.join(_outdir(args), "stability.json"), text)
    print(text)
    return EXIT_VIOLATED if rep.verdict == "violated" else EXIT_OK


def cmd_verify(args, poly, A) -> int:
    u, rep, p0 = _solve(args, poly, A)
    stab = estimate_lambda(poly, A, CreaseFamily(args.directions, args.offsets))
    lam = stab.lambda_hat if stab.verdict == "stable-evidence" else None
    est = estimate_report(u, A, p0, lam, args.C, args.d, args.c)
    out = _outdir(args)
    footer = {"status": rep.status, **est.to_dict()}
    write_solution_csv(os.path.join(out, "sol.csv"), u, residual(u, A), footer)
    rep.to_json(os.path.join(out, "report.json"))
    _atomic_write(os.path.join(out, "estimates.json"),
                  dump_json({"stability": stab.to_dict(), "estimates": est.to_dict()}))
    print(est.to_json())
    if not rep.converged:
        return EXIT_STALL
    failed = not est.det_bound_ok or est.norm_b_ok is False or stab.verdict == "violated"
    return EXIT_VIOLATED if failed else EXIT_OK


def cmd_balanced(args, poly) -> int:
    print(dump_json(balanced_affine(poly).to_dict()))
    return EXIT_OK


def cmd_dualize(args, poly, A) -> int:
    u, rep, _ = _solve(args, poly, A)
    out = _outdir(args)
    to_dual(u).to_csv(os.path.join(out, "dual.csv"))
    rep.to_json(os.path.join(out, "report.json"))
    return EXIT_OK if rep.converged else EXIT_STALL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        poly = load_polytope(args.polytope)
        if args.command == "balanced-a":
            return cmd_balanced(args, poly)
        A = CurvatureSpec.parse(args.A, poly)
        handler = {"solve": cmd_solve, "stability": cmd_stability, "verify": cmd_verify,
                   "dualize": cmd_dualize}[args.command]
        return handler(args, poly, A)
    except (InputError, PolytopeError, NotPositiveDefinite, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
