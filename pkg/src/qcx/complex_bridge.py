"""Complex Hessians (Levi matrices) on C^n = R^{2n} and the real/complex correspondences.

Coordinates are ordered (x_1..x_n, y_1..y_n) with z_j = x_j + i y_j. Levi
matrices are assembled from the real finite-difference Hessian by the
Wirtinger formula, so there is a single differentiation code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _parallel
from .core import (
    DEFAULT_BUDGET,
    Budget,
    QIndexReport,
    _grid_desc,
    grid_points,
    inertia_scan,
    witness_search,
)
from .expr import DEFAULT_HESS_STEP, ScalarField, as_box, fd_hessian, fd_hessian_batch
from .sets import OpenSetModel, euclid_distances, set_q_convex_check
from .spectra import DEFAULT_INERTIA_TOL, batch_inertia, eig_hermitian


def levi_from_hessian(H: np.ndarray) -> np.ndarray:
    """``L_kl = 1/4[(H_xkxl + H_ykyl) + i(H_xkyl - H_ykxl)]`` for real Hessians ``(..., 2n, 2n)``."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1] // 2
    xx = H[..., :n, :n]
    yy = H[..., n:, n:]
    xy = H[..., :n, n:]
    yx = H[..., n:, :n]
    L = 0.25 * ((xx + yy) + 1j * (xy - yx))
    return (L + np.conj(np.swapaxes(L, -1, -2))) / 2


@dataclass
class LeviEstimate:
    point: np.ndarray
    matrix: np.ndarray
    step: np.ndarray


def _real_point(z, n2: int) -> np.ndarray:
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return np.concatenate([z.real, z.imag]).astype(float)
    return np.asarray(z, dtype=float).reshape(n2)


def levi_matrix(psi: ScalarField, z) -> LeviEstimate:
    """Complex Hessian of ``psi`` at z (complex vector or real (x, y) vector)."""
    if psi.smooth == "C0":
        raise ValueError("levi_matrix needs a C2 field")
    if psi.dim % 2:
        raise ValueError("complex fields live on an even-dimensional real space")
    p = _real_point(z, psi.dim)
    est = fd_hessian(psi, p)
    return LeviEstimate(p, levi_from_hessian(est.matrix), est.step)


@dataclass
class LeviScan:
    points: np.ndarray
    negatives: np.ndarray
    zeros: np.ndarray
    status: list
    levi: np.ndarray
    real_hessians: np.ndarray


def levi_scan(psi: ScalarField, points, tol: float = DEFAULT_INERTIA_TOL, threads: int = 1) -> LeviScan:
    """Levi matrices and their inertia at many points.

    Inertia is counted on ``4 L``, which is normalized like a real Hessian
    (``4 L = H_u`` for rigid functions), so the zero band and its floor of
    ``tol`` treat both sides of the real/complex comparison identically.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N, n2 = points.shape
    n = n2 // 2

    def work(rg):
        b = fd_hessian_batch(psi, points[rg.start:rg.stop])
        return b.matrices, b.status

    outs = _parallel.ordered_map(work, _parallel.chunks(N, threads), threads)
    H = np.concatenate([o[0] for o in outs]) if outs else np.zeros((0, n2, n2))
    status = [s for o in outs for s in o[1]]
    L = levi_from_hessian(H)
    neg = np.full(N, -1)
    zero = np.full(N, -1)
    ok = np.array([s == "ok" for s in status], dtype=bool)
    if np.any(ok):
        w = eig_hermitian(L[ok])
        neg[ok], zero[ok] = batch_inertia(4 * w, tol)
    return LeviScan(points, neg, zero, status, L, H)


def qpsh_index_on_grid(psi: ScalarField, box=None, resolution=5, tol: float = DEFAULT_INERTIA_TOL,
                       threads: int = 1) -> QIndexReport:
    """Maximum Levi negative count over a grid in R^{2n}."""
    if psi.smooth == "C0" and psi.kink is None:
        raise ValueError("Levi criterion needs a C2 field (or a piecewise C2 field with a kink oracle)")
    box = psi.box if box is None else as_box(box, psi.dim)
    pts, _ = grid_points(box, resolution)
    scan = levi_scan(psi, pts, tol, threads)
    return QIndexReport(psi.name, pts, scan.negatives, scan.zeros, scan.status, tol,
                        _grid_desc(box, resolution, psi.dim), kind="levi")


def _default_window(n: int) -> np.ndarray:
    return np.array([[-1.0, 1.0]] * n)


def rigid_lift(u: ScalarField, window=None) -> ScalarField:
    """``psi(x, y) = u(x)`` on ``box(u) x window`` (window defaults to (-1,1)^n)."""
    n = u.dim
    win = _default_window(n) if window is None else as_box(window, n)
    uf = u.func

    def func(X):
        return uf(np.asarray(X, dtype=float)[..., :n])

    hess = None
    if u.hessian is not None:
        def hess(p):
            H = np.zeros((2 * n, 2 * n))
            H[:n, :n] = u.hessian(np.asarray(p)[:n])
            return H
    kink = None
    if u.kink is not None:
        def kink(stencil):
            return u.kink(np.asarray(stencil)[..., :n])
    domain = None
    if u.domain is not None:
        def domain(X):
            return u.domain(np.asarray(X)[..., :n])
    clearance = None
    if u.clearance is not None:
        def clearance(X):
            return u.clearance(np.asarray(X)[..., :n])
    return ScalarField(2 * n, func, np.concatenate([u.box, win]), u.smooth, hessian=hess,
                       name=f"rigid({u.name})", domain=domain, clearance=clearance, kink=kink,
                       complex_mode=True)


@dataclass
class FirstMainReport:
    q: int
    real_index: int | None
    levi_index: int | None
    points: int
    agreement: int
    compared: int
    identity_deviation: float
    witness_found: bool | None

    @property
    def real_verdict(self) -> bool:
        return self.real_index is not None and self.real_index <= self.q

    @property
    def levi_verdict(self) -> bool:
        return self.levi_index is not None and self.levi_index <= self.q

    @property
    def consistent(self) -> bool:
        return self.real_verdict == self.levi_verdict and self.agreement == self.compared

    def to_json(self) -> dict:
        return {"q": self.q, "real_index": self.real_index, "levi_index": self.levi_index,
                "real_q_convex": self.real_verdict, "q_plurisubharmonic": self.levi_verdict,
                "consistent": self.consistent, "pointwise_agreement": self.agreement,
                "points_compared": self.compared, "identity_deviation": self.identity_deviation,
                "witness_found": self.witness_found}


def check_first_main_theorem(u: ScalarField, q: int, box, resolution=5, imag_resolution=3,
                             budget: Budget | None = None, seed: int = 0, tol: float = DEFAULT_INERTIA_TOL,
                             threads: int = 1, window=None) -> FirstMainReport:
    """Compare real-Hessian negatives of u with Levi negatives of its rigid lift.

    Also reports ``max |Levi - H_u/4|`` relative to ``max(1, |H_u|)``. The Levi
    side is differenced on the 2n-dimensional lift (any Hessian hook dropped)
    and the reference H_u uses a doubled step, so the two routes share no
    stencil values. With a budget, the witness route runs on u as a third opinion.
    """
    n = u.dim
    box = as_box(box, n)
    win = _default_window(n) if window is None else as_box(window, n)
    xs, _ = grid_points(box, resolution)
    ys, _ = grid_points(win * 0.5, imag_resolution)
    real = inertia_scan(u, xs, tol, threads)
    lift = rigid_lift(u, win).with_hooks(hessian=None)
    Z = np.concatenate([np.repeat(xs, len(ys), axis=0), np.tile(ys, (len(xs), 1))], axis=1)
    lev = levi_scan(lift, Z, tol, threads)
    real_H = fd_hessian_batch(u, xs, h1=2 * DEFAULT_HESS_STEP).matrices
    agree = compared = 0
    dev = 0.0
    for i in range(len(xs)):
        if real.status[i] != "ok":
            continue
        scale = max(1.0, float(np.max(np.abs(real_H[i]))))
        for j in range(len(ys)):
            r = i * len(ys) + j
            if lev.status[r] != "ok":
                continue
            compared += 1
            agree += int(lev.negatives[r] == real.negatives[i])
            dev = max(dev, float(np.max(np.abs(lev.levi[r] - real_H[i] / 4))) / scale)
    ok_r = real.negatives[real.ok]
    ok_l = lev.negatives[np.array([s == "ok" for s in lev.status], dtype=bool)]
    wf = None
    if budget is not None:
        wf = witness_search(u, q, box, budget, seed, tol, threads) is not None
    return FirstMainReport(q, int(np.max(ok_r)) if ok_r.size else None,
                           int(np.max(ok_l)) if ok_l.size else None, len(Z), agree, compared, dev, wf)


# ---------------------------------------------------------------------------
# Tubes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TubeSpec:
    """``Omega = omega + i(-a, a)^n``; ``a = inf`` gives the full tube."""

    base: OpenSetModel
    a: float = math.inf

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("tube half-width must be positive")

    @property
    def n(self) -> int:
        return self.base.dim

    def member(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        n = self.n
        return self.base.member(Z[:, :n]) & np.all(np.abs(Z[:, n:]) < self.a, axis=1)

    def distance_terms(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        n = self.n
        base = self.base.distance_terms(Z[:, :n])
        if base is None:
            base = euclid_distances(self.base, Z[:, :n])[:, None]
        if math.isinf(self.a):
            return base
        y = Z[:, n:]
        return np.concatenate([base, self.a - y, self.a + y], axis=1)

    def distance(self, Z) -> np.ndarray:
        t = self.distance_terms(Z)
        return np.min(t, axis=1) if t.shape[1] else np.full(len(t), np.inf)


def tube_neg_log_dist(t: TubeSpec, window=None) -> ScalarField:
    """``-ln d2(z, boundary of Omega)`` as a piecewise-smooth field on R^{2n}."""
    n = t.n
    if math.isinf(t.a):
        win = _default_window(n) if window is None else as_box(window, n)
    else:
        win = np.array([[-t.a, t.a]] * n)
    box = np.concatenate([t.base.bbox(), win])

    def flat(X):
        X = np.asarray(X, dtype=float)
        d = t.distance(X.reshape(-1, 2 * n))
        with np.errstate(divide="ignore"):
            v = np.where(d > 0, -np.log(np.where(d > 0, d, 1.0)), np.inf)
        return v.reshape(X.shape[:-1])

    def kink(stencil):
        N, S, m = stencil.shape
        terms = t.distance_terms(stencil.reshape(-1, m))
        if terms.shape[1] <= 1:
            return np.zeros(N, dtype=bool)
        arg = np.argmin(terms, axis=1).reshape(N, S)
        return np.any(arg != arg[:, :1], axis=1)

    def domain(X):
        X = np.asarray(X, dtype=float)
        return t.member(X.reshape(-1, 2 * n)).reshape(X.shape[:-1])

    def clearance(X):
        return t.distance(np.asarray(X, dtype=float))

    return ScalarField(2 * n, flat, box, "C0", name="-ln d2 (tube)", domain=domain, clearance=clearance,
                       kink=kink, complex_mode=True)


@dataclass
class TubeReport:
    q: int
    a: float
    levi_index: int | None
    points_ok: int
    skipped: dict
    base_check: object

    @property
    def pseudoconvex(self) -> bool:
        return self.levi_index is not None and self.levi_index <= self.q

    @property
    def agrees(self) -> bool:
        return self.pseudoconvex == self.base_check.consistent

    def to_json(self) -> dict:
        return {"q": self.q, "a": "inf" if math.isinf(self.a) else self.a, "levi_index": self.levi_index,
                "q_pseudoconvex": self.pseudoconvex, "points_ok": self.points_ok, "skipped": self.skipped,
                "base_set_check": self.base_check.to_json(), "agrees_with_base": self.agrees}


def tube_pseudoconvexity_check(t: TubeSpec, q: int, box, resolution=9, imag_resolution=3,
                               budget: Budget = DEFAULT_BUDGET, seed: int = 0, tol: float = DEFAULT_INERTIA_TOL,
                               threads: int = 1) -> TubeReport:
    """Levi negatives of ``-ln d2`` on the tube versus the witness check on the base set.

    ``box`` is a box in the base space R^n; imaginary parts are sampled inside
    ``(-a/2, a/2)^n`` (or ``(-1/2, 1/2)^n`` for the full tube).
    """
    n = t.n
    box = as_box(box, n)
    field = tube_neg_log_dist(t)
    half = 0.5 if math.isinf(t.a) else 0.5 * t.a
    xs, _ = grid_points(box, resolution)
    ys, _ = grid_points(np.array([[-half, half]] * n), imag_resolution)
    Z = np.concatenate([np.repeat(xs, len(ys), axis=0), np.tile(ys, (len(xs), 1))], axis=1)
    scan = levi_scan(field, Z, tol, threads)
    ok = np.array([s == "ok" for s in scan.status], dtype=bool)
    skipped: dict[str, int] = {}
    for s in scan.status:
        if s != "ok":
            skipped[s] = skipped.get(s, 0) + 1
    base = set_q_convex_check(t.base, q, box, budget, seed, tol, threads)
    idx = int(np.max(scan.negatives[ok])) if np.any(ok) else None
    return TubeReport(q, t.a, idx, int(np.sum(ok)), skipped, base)


# ---------------------------------------------------------------------------
# Reinhardt pullbacks
# ---------------------------------------------------------------------------


def reinhardt_pullback(u: ScalarField) -> ScalarField:
    """``psi(z) = u(ln|z_1|, ..., ln|z_n|)`` on the Reinhardt domain over u's box."""
    n = u.dim
    uf = u.func
    lo, hi = u.box[:, 0], u.box[:, 1]

    def moduli(X):
        X = np.asarray(X, dtype=float)
        return np.hypot(X[..., :n], X[..., n:])

    def func(X):
        r = moduli(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.log(r)
        vals = np.asarray(uf(logs), dtype=float)
        return np.where(np.all(r > 0, axis=-1), vals, np.nan)

    def domain(X):
        r = moduli(X)
        with np.errstate(divide="ignore"):
            logs = np.log(np.where(r > 0, r, 1.0))
        return np.all(r > 0, axis=-1) & np.all((logs > lo) & (logs < hi), axis=-1)

    R = np.exp(hi)
    box = np.concatenate([np.stack([-R, R], axis=1)] * 2)
    return ScalarField(2 * n, func, box, u.smooth, name=f"reinhardt({u.name})", domain=domain,
                       complex_mode=True)


@dataclass
class ReinhardtReport:
    agreement: int
    compared: int
    skipped: dict
    levi_index: int | None
    real_index: int | None

    @property
    def fraction(self) -> float:
        return self.agreement / self.compared if self.compared else 0.0

    def to_json(self) -> dict:
        return {"agreement": self.agreement, "compared": self.compared, "fraction": self.fraction,
                "skipped": self.skipped, "levi_index": self.levi_index, "real_index": self.real_index}


def check_reinhardt_correspondence(u: ScalarField, box=None, resolution=21,
                                   tol: float = DEFAULT_INERTIA_TOL, threads: int = 1) -> ReinhardtReport:
    """Levi negatives of the pullback versus real-Hessian negatives of u at ln|z|."""
    psi = reinhardt_pullback(u)
    box = psi.box if box is None else as_box(box, psi.dim)
    Z, _ = grid_points(box, resolution)
    n = u.dim
    inside = psi.domain(Z)
    Zin = Z[inside]
    lev = levi_scan(psi, Zin, tol, threads)
    logs = np.log(np.hypot(Zin[:, :n], Zin[:, n:]))
    real = inertia_scan(u, logs, tol, threads)
    skipped: dict[str, int] = {"node-outside-domain": int(np.sum(~inside))}
    agree = compared = 0
    for i in range(len(Zin)):
        st = lev.status[i] if lev.status[i] != "ok" else real.status[i]
        if st != "ok":
            skipped[st] = skipped.get(st, 0) + 1
            continue
        compared += 1
        agree += int(lev.negatives[i] == real.negatives[i])
    okl = lev.negatives[[s == "ok" for s in lev.status]] if len(Zin) else np.zeros(0)
    okr = real.negatives[real.ok] if len(Zin) else np.zeros(0)
    return ReinhardtReport(agree, compared, skipped, int(np.max(okl)) if len(okl) else None,
                           int(np.max(okr)) if len(okr) else None)
