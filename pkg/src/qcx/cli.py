"""Command-line front end: ``qcx <subcommand> [options]``.

Every subcommand writes a JSON report (``--out``, default stdout is a human
summary only) and exits 0 on success, including when a violation is found.
Configuration errors exit 2 and numeric failures exit 3.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time

import numpy as np

from . import __version__, _parallel, report
from .complex_bridge import (
    TubeSpec,
    check_reinhardt_correspondence,
    qpsh_index_on_grid,
    reinhardt_pullback,
    tube_pseudoconvexity_check,
)
from .core import (
    Budget,
    KernelSpec,
    approximate_from_above,
    classify_on_grid,
    grid_points,
    witness_search,
)
from .expr import DomainError, EvaluationError, ExprSyntaxError, ScalarField, as_box
from .sets import (
    GraphComplement,
    continuity_principle_test,
    graph_complement_exhaustion,
    graph_complement_family,
    neg_log_dist_field,
    set_from_json,
    set_q_convex_check,
)
from .spectra import ConvergenceError, InfeasibleLPError, PairingError, UnboundedLPError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (ConvergenceError, PairingError, UnboundedLPError, InfeasibleLPError,
                  EvaluationError, DomainError, FloatingPointError)

FOUND = "not real q-convex at resolution"
NONE_FOUND = "no violation found at resolution"

# keys left out of the config echo: they change where output goes or how fast
# it is computed, never what is computed
_RUNTIME_KEYS = ("out", "csv", "threads", "func")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _json_arg(text: str):
    """Inline JSON, or a path to a JSON file."""
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"not valid JSON and not a file: {text!r} ({exc.msg})") from None


def _box(text: str | None, n: int, default=None) -> np.ndarray:
    if text is None:
        return np.array([[-1.0, 1.0]] * n) if default is None else np.asarray(default, dtype=float)
    raw = _json_arg(text)
    if raw and not isinstance(raw[0], (list, tuple)):
        raw = [raw] * n
    try:
        return as_box(raw, n)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad --box: {exc}") from None


def _budget(args) -> Budget:
    for name in ("slices", "boundary_samples", "interior_samples"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.centers is not None and args.centers < 1:
        raise UsageError("--centers must be positive")
    return Budget(args.slices, args.boundary_samples, args.interior_samples, args.centers)


def _resolution(args, default: int) -> int:
    r = default if args.resolution is None else args.resolution
    if r < 2:
        raise UsageError("--resolution must be at least 2")
    args.resolution = r
    return r


def _check_q(q: int) -> int:
    if q < 0:
        raise UsageError("--q must be non-negative")
    return q


def _set_box(s, text: str | None) -> np.ndarray:
    """Default scan box: the set's bounding box, with unbounded sides cut to width 2."""
    if text is not None:
        return _box(text, s.dim)
    out = []
    for lo, hi in s.bbox():
        if not math.isfinite(lo):
            lo = hi - 2.0 if math.isfinite(hi) else -1.0
        if not math.isfinite(hi):
            hi = lo + 2.0
        out.append([lo, hi])
    return np.array(out)


def _infer_dim(exprs) -> int:
    idx = [int(m) for e in exprs for m in re.findall(r"x(\d+)", e)]
    return max(idx) if idx else 1


def _field_csv(path: str | None, f: ScalarField, box: np.ndarray, resolution: int) -> None:
    if path:
        pts, _ = grid_points(box, resolution)
        report.write_csv(path, pts, f.raw(pts))


def _verdict_line(found: bool) -> str:
    return FOUND if found else NONE_FOUND


# ---------------------------------------------------------------------------
# Subcommands; each returns (result dict, summary lines)
# ---------------------------------------------------------------------------


def cmd_classify(args, threads: int):
    if args.dim < 1:
        raise UsageError("--dim must be positive")
    f = ScalarField.from_expr(args.expr, args.dim, complex_mode=args.complex)
    box = _box(args.box, f.dim)
    args.box = box.tolist()
    res = _resolution(args, 5)
    if args.complex:
        rep = qpsh_index_on_grid(f, box, res, args.tol, threads)
    else:
        rep = classify_on_grid(f, box, res, args.tol, threads)
    _field_csv(args.csv, f, box, res)
    if rep.q_index is None:
        raise EvaluationError("no grid point produced a usable Hessian")
    result = rep.to_json(records=args.records)
    kind = "Levi" if args.complex else "Hessian"
    lines = [f"{kind} negatives on {rep.points.shape[0]} grid points "
             f"({result['points_ok']} usable); strict index {rep.strict_index}"]
    if args.q is not None:
        result["q"] = args.q
        result["within_q"] = rep.q_index <= args.q
        lines.append(f"q-index <= {args.q}: {result['within_q']}")
    lines.append(str(rep.q_index))
    return result, lines


def cmd_witness(args, threads: int):
    if args.dim < 1:
        raise UsageError("--dim must be positive")
    q = _check_q(args.q)
    f = ScalarField.from_expr(args.expr, args.dim)
    box = _box(args.box, f.dim)
    args.box = box.tolist()
    w = witness_search(f, q, box, _budget(args), args.seed, args.tol, threads)
    result = {"q": q, "verdict": _verdict_line(w is not None), "witness_found": w is not None,
              "witness": None if w is None else w.to_json()}
    if w is None:
        lines = [f"searched slices of dimension {q + 1}" if q < f.dim else f"q >= {f.dim}: nothing to check",
                 "none"]
    else:
        lines = [f"violation on a {q + 1}-dimensional slice, ball radius {w.ball.radius:.6g}",
                 f"witness margin {w.margin:.6g}"]
    return result, lines


def cmd_set_check(args, threads: int):
    q = _check_q(args.q)
    s = set_from_json(_json_arg(args.set))
    box = _set_box(s, args.box)
    args.box = box.tolist()
    chk = set_q_convex_check(s, q, box, _budget(args), args.seed, args.tol, threads)
    if args.csv:
        _field_csv(args.csv, neg_log_dist_field(s), box, _resolution(args, 21))
    result = chk.to_json()
    result["set"] = s.to_json()
    lines = [f"witness search on -ln d2 at q={q}", "consistent" if chk.consistent else "violated"]
    return result, lines


def _parse_a(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise UsageError(f"bad --a: {text!r}") from None
    if not a > 0:
        raise UsageError("--a must be positive (or inf)")
    return a


def cmd_tube(args, threads: int):
    q = _check_q(args.q)
    s = set_from_json(_json_arg(args.set))
    a = _parse_a(args.a)
    box = _set_box(s, args.box)
    args.box = box.tolist()
    if args.imag_resolution < 2:
        raise UsageError("--imag-resolution must be at least 2")
    rep = tube_pseudoconvexity_check(TubeSpec(s, a), q, box, _resolution(args, 9), args.imag_resolution,
                                     _budget(args), args.seed, args.tol, threads)
    result = rep.to_json()
    result["set"] = s.to_json()
    lines = [f"Levi index {rep.levi_index} over {rep.points_ok} usable points; skipped {rep.skipped}",
             f"base set check: {'consistent' if rep.base_check.consistent else 'violated'}",
             "consistent" if rep.pseudoconvex else "violated"]
    return result, lines


def cmd_reinhardt(args, threads: int):
    if args.dim < 1:
        raise UsageError("--dim must be positive")
    box = _box(args.box, args.dim)
    args.box = box.tolist()
    if not np.all(np.isfinite(box)):
        raise UsageError("reinhardt needs a bounded log-domain box")
    u = ScalarField.from_expr(args.expr, args.dim, box=box)
    res = _resolution(args, 21)
    rep = check_reinhardt_correspondence(u, resolution=res, tol=args.tol, threads=threads)
    psi = reinhardt_pullback(u)
    _field_csv(args.csv, psi, psi.box, res)
    result = rep.to_json()
    if args.q is not None:
        result["q"] = args.q
        result["q_plurisubharmonic"] = rep.levi_index is not None and rep.levi_index <= args.q
    lines = [f"pullback Levi negatives match u's Hessian negatives at {rep.agreement}/{rep.compared} points",
             f"skipped {rep.skipped}", str(rep.levi_index)]
    return result, lines


def cmd_graph_demo(args, threads: int):
    exprs = list(args.f)
    if args.k is not None and args.k != len(exprs):
        raise UsageError(f"--k {args.k} does not match the {len(exprs)} component(s) given by --f")
    n = args.dim if args.dim is not None else _infer_dim(exprs)
    g = GraphComplement(exprs, n)
    x1 = np.asarray(_json_arg(args.x1), dtype=float) if args.x1 else -np.eye(n)[0]
    x2 = np.asarray(_json_arg(args.x2), dtype=float) if args.x2 else np.eye(n)[0]
    try:
        fam = graph_complement_family(g, x1, x2, args.t0)
    except ValueError:
        fam = None
    result: dict = {"f": exprs, "n": n, "k": len(exprs)}
    if fam is not None:
        steps = _resolution(args, 33)
        v = continuity_principle_test(g, fam, t_steps=steps, s_steps=steps)
        result.update(mode="continuity_principle", family=fam.info, verdict=v.to_json())
        if v.status == "violated":
            lines = [f"family touches the graph at {fam.info['touch_point']}",
                     f"violation at t={v.t_star:g}, point {v.point}"]
        else:
            lines = [f"continuity principle {v.status}: {v.reason}"]
        lines.append(v.status)
        return result, lines
    # f is affine along the segment: report the exhaustion route instead
    try:
        ex = graph_complement_exhaustion(g)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    box = _box(args.box, n + len(exprs))
    args.box = box.tolist()
    rep = classify_on_grid(ex, box, _resolution(args, 9), args.tol, threads)
    result.update(mode="exhaustion", exhaustion=rep.to_json(records=args.records))
    lines = [f"affine f: exhaustion q-index {rep.q_index} on {int(np.sum(rep.ok))} usable points",
             "holds" if rep.q_index is not None and rep.q_index <= 0 else "violated"]
    return result, lines


def cmd_regularize(args, threads: int):
    if args.dim < 1:
        raise UsageError("--dim must be positive")
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    u = ScalarField.from_expr(args.expr, args.dim)
    box = _box(args.box, args.dim)
    args.box = box.tolist()
    try:
        g = KernelSpec(args.radius, args.profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    appr = approximate_from_above(u, box, args.k, g, _resolution(args, 33))
    if args.csv:
        report.write_csv(args.csv, appr.grid.points(), appr.grid.values.ravel())
    result = appr.to_json()
    lines = [f"approximant on {result['nodes']} nodes, min margin over u {appr.min_margin:.6g}",
             "dominates" if appr.dominated else f"fails at {appr.offending}"]
    return result, lines


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--box", help="JSON list of [lo, hi] pairs (or one pair for every axis)")
    common.add_argument("--resolution", type=int, help="grid points per axis")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-7, help="zero band for eigenvalues")
    common.add_argument("--out", help="write the JSON report here")
    common.add_argument("--records", action="store_true", help="include per-point records")
    common.add_argument("--csv", help="export sampled field values as CSV")
    common.add_argument("--threads", type=int, help="worker threads (default: QCX_THREADS or CPU count)")
    common.add_argument("--slices", type=int, default=64)
    common.add_argument("--boundary-samples", type=int, default=128)
    common.add_argument("--interior-samples", type=int, default=256)
    common.add_argument("--centers", type=int, help="cap on ball centers per slice")

    p = argparse.ArgumentParser(prog="qcx", description="Numerical real q-convexity checks.")
    p.add_argument("--version", action="version", version=f"qcx {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    c = sub.add_parser("classify", parents=[common], help="grid q-index of a field")
    c.add_argument("--expr", required=True)
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--complex", action="store_true", help="field on C^n; use x_j, y_j for Re/Im parts")
    c.add_argument("--q", type=int)
    c.set_defaults(func=cmd_classify)

    w = sub.add_parser("witness", parents=[common], help="search for a maximum-property violation")
    w.add_argument("--expr", required=True)
    w.add_argument("--dim", type=int, required=True)
    w.add_argument("--q", type=int, required=True)
    w.set_defaults(func=cmd_witness)

    s = sub.add_parser("set-check", parents=[common], help="real q-convexity of an open set")
    s.add_argument("--set", required=True, help="set JSON (inline or file)")
    s.add_argument("--q", type=int, required=True)
    s.set_defaults(func=cmd_set_check)

    t = sub.add_parser("tube", parents=[common], help="q-pseudoconvexity of a tube over a set")
    t.add_argument("--set", required=True)
    t.add_argument("--a", default="inf", help="half-width of the imaginary window (inf for a full tube)")
    t.add_argument("--q", type=int, required=True)
    t.add_argument("--imag-resolution", type=int, default=3)
    t.set_defaults(func=cmd_tube)

    r = sub.add_parser("reinhardt", parents=[common], help="Levi index of u(ln|z|) against u")
    r.add_argument("--expr", required=True)
    r.add_argument("--dim", type=int, required=True)
    r.add_argument("--q", type=int)
    r.set_defaults(func=cmd_reinhardt)

    g = sub.add_parser("graph-demo", parents=[common], help="continuity principle on a graph complement")
    g.add_argument("--f", action="append", required=True, help="component of f (repeat for several)")
    g.add_argument("--k", type=int, help="number of components (checked against --f)")
    g.add_argument("--dim", type=int, help="base dimension n (default: highest x index)")
    g.add_argument("--x1", help="segment start (JSON list)")
    g.add_argument("--x2", help="segment end (JSON list)")
    g.add_argument("--t0", type=float, default=0.0)
    g.set_defaults(func=cmd_graph_demo)

    a = sub.add_parser("regularize", parents=[common], help="approximate a field from above")
    a.add_argument("--expr", required=True)
    a.add_argument("--dim", type=int, required=True)
    a.add_argument("--k", type=int, default=1, help="approximation index")
    a.add_argument("--radius", type=float, default=0.1, help="kernel support radius")
    a.add_argument("--profile", choices=("poly", "bump"), default="poly")
    a.set_defaults(func=cmd_regularize)
    return p


def _value_options(parser: argparse.ArgumentParser) -> set[str]:
    opts: set[str] = set()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                opts |= _value_options(sp)
        elif action.option_strings and action.nargs is None:
            opts.update(o for o in action.option_strings if o.startswith("--"))
    return opts


def _glue_values(argv: list[str], opts: set[str]) -> list[str]:
    """Rewrite ``--opt value`` as ``--opt=value`` so values like "-x1^2" parse."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in opts and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_values(argv, _value_options(parser)))
    start = time.perf_counter()
    try:
        threads = _parallel.resolve_threads(args.threads)
        result, lines = args.func(args, threads)
    except (UsageError, ExprSyntaxError) as exc:
        print(f"qcx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"qcx: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"qcx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rep = report.build_report(args.subcommand, config_echo(args), result, __version__,
                              time.perf_counter() - start)
    if args.out:
        report.write_report(args.out, rep)
    for line in lines:
        print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
