"""Real q-convexity of scalar fields.

Two independent routes are offered. The Hessian route counts negative
eigenvalues of finite-difference Hessians (valid for C2 fields). The witness
route searches for a concrete failure of the local maximum property: a
(q+1)-dimensional affine slice, a ball in it, and an affine function that
dominates the field on the ball's boundary but not at some interior point.
The witness route never proves convexity; finding nothing only means no
violation was seen at the sampled resolution.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _parallel
from ._sampling import axis_and_sign_points, sphere_points, uniform_ball, uniform_sphere
from .expr import (
    DEFAULT_HESS_STEP,
    DomainError,
    EvaluationError,
    ScalarField,
    SMOOTHNESS,
    as_box,
    fd_gradient,
    fd_hessian,
    fd_hessian_batch,
    field_sum,
)
from .spectra import (
    DEFAULT_INERTIA_TOL,
    AffineFunctional,
    Inertia,
    UnboundedLPError,
    batch_inertia,
    eig_symmetric,
    fit_affine_upper_envelope,
    inertia,
    jacobi_eigh,
)

DEFAULT_EPS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
RADIUS_FACTORS = (1.0, 0.1, 0.01)
MAX_CUTS = 20


# ---------------------------------------------------------------------------
# Slices, balls, witnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineSlice:
    """``base + span(basis columns)``, basis ``(n, k)`` orthonormal."""

    base: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float).ravel()
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != base.size or not 1 <= basis.shape[1] <= base.size:
            raise ValueError("basis must be (n, k) with 1 <= k <= n")
        if np.max(np.abs(basis.T @ basis - np.eye(basis.shape[1]))) > 1e-12:
            raise ValueError("slice basis is not orthonormal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "basis", basis)

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def ambient(self, y) -> np.ndarray:
        return self.base + np.asarray(y, dtype=float) @ self.basis.T


@dataclass(frozen=True, eq=False)
class SliceBall:
    slice: AffineSlice
    center: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class Witness:
    """Certificate that the local maximum property fails on one slice ball.

    ``functional`` acts on slice coordinates; ``point`` is the interior point
    (slice coordinates) where ``u - l`` equals ``margin > 0`` while ``u <= l``
    on every boundary point that was checked.
    """

    ball: SliceBall
    functional: AffineFunctional
    point: np.ndarray
    margin: float
    scale: float
    boundary_gap: float
    slice_index: int

    def to_json(self) -> dict:
        sl = self.ball.slice
        return {
            "slice": {"base": sl.base.tolist(), "basis": sl.basis.T.tolist()},
            "center": self.ball.center.tolist(),
            "radius": self.ball.radius,
            "functional": self.functional.to_json(),
            "point": self.point.tolist(),
            "point_ambient": sl.ambient(self.point).tolist(),
            "margin": self.margin,
            "scale": self.scale,
            "boundary_gap": self.boundary_gap,
            "slice_index": self.slice_index,
        }


@dataclass(frozen=True)
class Budget:
    slices: int = 64
    boundary_samples: int = 128
    interior_samples: int = 256
    centers: int | None = None  # cap on ball centers (None: all coarse centers)

    def to_json(self) -> dict:
        out = {"slices": self.slices, "boundary_samples": self.boundary_samples,
               "interior_samples": self.interior_samples}
        if self.centers is not None:
            out["centers"] = self.centers
        return out


DEFAULT_BUDGET = Budget()


# ---------------------------------------------------------------------------
# Hessian route
# ---------------------------------------------------------------------------


def _require_hessian_route(f: ScalarField) -> None:
    if f.smooth == "C0" and f.kink is None and f.hessian is None:
        raise ValueError("eigenvalue criteria need a C2 field (or a piecewise C2 field with a kink oracle)")


def hessian_q_index(f: ScalarField, p, tol: float = DEFAULT_INERTIA_TOL) -> Inertia:
    """Inertia of the Hessian of a C2 field at ``p``; the q-index is ``negatives``."""
    if f.smooth == "C0":
        raise ValueError("hessian_q_index needs a field tagged C2 or Cinf")
    p = np.asarray(p, dtype=float).reshape(f.dim)
    reach = 2 * DEFAULT_HESS_STEP * np.maximum(1.0, np.abs(p))
    if np.any(p - reach <= f.box[:, 0]) or np.any(p + reach >= f.box[:, 1]):
        raise DomainError(f"point {p.tolist()} is too close to the domain boundary")
    est = fd_hessian(f, p)
    return inertia(eig_symmetric(est.matrix), tol=tol)


def grid_points(box, resolution) -> tuple[np.ndarray, list[np.ndarray]]:
    """Regular grid including endpoints, flattened in C order."""
    box = np.asarray(box, dtype=float)
    n = box.shape[0]
    res = [int(resolution)] * n if np.isscalar(resolution) else [int(r) for r in resolution]
    if len(res) != n or min(res) < 2:
        raise ValueError("need one resolution >= 2 per axis")
    if not np.all(np.isfinite(box)):
        raise ValueError("grid box must be finite")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), axes


@dataclass
class InertiaScan:
    points: np.ndarray
    negatives: np.ndarray
    zeros: np.ndarray
    status: list
    eigenvalues: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status], dtype=bool)


def inertia_scan(f: ScalarField, points, tol: float = DEFAULT_INERTIA_TOL, threads: int = 1,
                 matrices=None) -> InertiaScan:
    """Pointwise Hessian inertia; failing points get a status other than "ok"."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N, n = points.shape
    parts = _parallel.chunks(N, threads)

    def work(rg):
        b = fd_hessian_batch(f, points[rg.start:rg.stop])
        return b.matrices, b.status

    if matrices is None:
        outs = _parallel.ordered_map(work, parts, threads)
        H = np.concatenate([o[0] for o in outs]) if outs else np.zeros((0, n, n))
        status = [s for o in outs for s in o[1]]
    else:
        H, status = matrices
    eigs = np.full((N, H.shape[-1]), np.nan)
    neg = np.full(N, -1)
    zero = np.full(N, -1)
    ok = np.array([s == "ok" for s in status], dtype=bool)
    if np.any(ok):
        w = jacobi_eigh(H[ok])
        eigs[ok] = w
        neg[ok], zero[ok] = batch_inertia(w, tol)
    return InertiaScan(points, neg, zero, status, eigs)


@dataclass
class QIndexReport:
    field_id: str
    points: np.ndarray
    negatives: np.ndarray
    zeros: np.ndarray
    status: list
    tol: float
    grid: dict
    kind: str = "real"

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status], dtype=bool)

    @property
    def q_index(self) -> int | None:
        m = self.ok
        return int(np.max(self.negatives[m])) if np.any(m) else None

    @property
    def strict_index(self) -> int | None:
        m = self.ok
        return int(np.max(self.negatives[m] + self.zeros[m])) if np.any(m) else None

    @property
    def skipped(self) -> dict:
        out: dict[str, int] = {}
        for s in self.status:
            if s != "ok":
                out[s] = out.get(s, 0) + 1
        return out

    def records(self) -> list[dict]:
        dim = self.points.shape[1]
        rec = []
        for p, ng, z, s in zip(self.points, self.negatives, self.zeros, self.status):
            r = {"point": p.tolist(), "status": s}
            if s == "ok":
                r.update(negatives=int(ng), zeros=int(z), positives=int(self._order - ng - z))
            rec.append(r)
        return rec

    @property
    def _order(self) -> int:
        return self.points.shape[1] if self.kind == "real" else self.points.shape[1] // 2

    def to_json(self, records: bool = False) -> dict:
        out = {
            "field": self.field_id,
            "kind": self.kind,
            "q_index": self.q_index,
            "strict_index": self.strict_index,
            "tol": self.tol,
            "grid": self.grid,
            "points_total": int(len(self.status)),
            "points_ok": int(np.sum(self.ok)),
            "skipped": self.skipped,
        }
        if records:
            out["records"] = self.records()
        return out


def _grid_desc(box, resolution, n) -> dict:
    res = [int(resolution)] * n if np.isscalar(resolution) else [int(r) for r in resolution]
    return {"box": np.asarray(box, dtype=float).tolist(), "resolution": res}


def classify_on_grid(f: ScalarField, box=None, resolution=5, tol: float = DEFAULT_INERTIA_TOL,
                     threads: int = 1) -> QIndexReport:
    """Maximum Hessian negative count over a regular grid (endpoints included)."""
    _require_hessian_route(f)
    box = f.box if box is None else as_box(box, f.dim)
    _check_sub_box(box, f.box)
    pts, _ = grid_points(box, resolution)
    scan = inertia_scan(f, pts, tol, threads)
    return QIndexReport(f.name, pts, scan.negatives, scan.zeros, scan.status, tol,
                        _grid_desc(box, resolution, f.dim))


def _check_sub_box(box: np.ndarray, outer: np.ndarray) -> None:
    if np.any(box[:, 0] < outer[:, 0]) or np.any(box[:, 1] > outer[:, 1]):
        raise ValueError("requested box is not contained in the field's domain box")


# ---------------------------------------------------------------------------
# Witness route
# ---------------------------------------------------------------------------


def gram_schmidt(g: np.ndarray) -> np.ndarray | None:
    """Orthonormalize columns (twice, for stability); None if rank deficient."""
    q = np.array(g, dtype=float)
    for j in range(q.shape[1]):
        for _ in range(2):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        nrm = np.linalg.norm(q[:, j])
        if nrm < 1e-10:
            return None
        q[:, j] /= nrm
    return q


def coarse_centers(box: np.ndarray) -> np.ndarray:
    """Box center followed by the points a quarter of the way to each face."""
    mid = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2
    out = [mid]
    for i in range(box.shape[0]):
        for s in (-1.0, 1.0):
            c = mid.copy()
            c[i] += s * half[i] / 2
            out.append(c)
    return np.array(out)


def slice_frames(f: ScalarField, k: int, centers: np.ndarray, slices: int, seed: int,
                 guided: bool = True) -> list[np.ndarray]:
    """Axis frames, then Hessian-guided frames (C2 fields), then seeded random frames."""
    n = f.dim
    frames: list[np.ndarray] = []
    projectors: list[np.ndarray] = []

    def add(V):
        P = V @ V.T
        if any(np.max(np.abs(P - Q)) < 1e-9 for Q in projectors):
            return
        frames.append(V)
        projectors.append(P)

    eye = np.eye(n)
    for combo in itertools.combinations(range(n), k):
        add(eye[:, list(combo)])
    if guided and f.smooth != "C0":
        b = fd_hessian_batch(f, centers)
        ok = b.ok & np.all(np.isfinite(b.matrices), axis=(1, 2))
        if np.any(ok):
            _, vecs = jacobi_eigh(b.matrices[ok], vectors=True)
            for V in vecs:
                G = gram_schmidt(V[:, :k])
                if G is not None:
                    add(G)
    index = 0
    attempts = 0
    while len(frames) < slices and attempts < 4 * slices + 16:
        rng = np.random.default_rng([seed ^ index, 0])
        G = gram_schmidt(rng.standard_normal((n, k)))
        index += 1
        attempts += 1
        if G is not None:
            add(G)
    return frames


def _unit_samples(k: int, budget: Budget, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed ^ index, 1])
    if k == 1:
        S = np.array([[1.0], [-1.0]])
    else:
        det = axis_and_sign_points(k)
        extra = max(0, budget.boundary_samples - len(det))
        S = np.concatenate([det, uniform_sphere(rng, extra, k)])
    m = max(1, budget.interior_samples)
    D = np.concatenate([np.zeros((1, k)), uniform_ball(rng, m - 1, k)])
    return S, D


def _fit_radius(c: np.ndarray, V: np.ndarray, box: np.ndarray) -> float:
    w = np.linalg.norm(V, axis=1)
    margin = np.minimum(c - box[:, 0], box[:, 1] - c)
    if np.any(margin <= 0):
        return 0.0
    with np.errstate(divide="ignore"):
        lim = np.where(w > 1e-15, margin / np.where(w > 1e-15, w, 1.0), np.inf)
    return float(np.min(lim))


class _BallEvaluator:
    def __init__(self, f: ScalarField, c: np.ndarray, V: np.ndarray):
        self.f, self.c, self.V = f, c, V

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        X = self.c + np.atleast_2d(Y) @ self.V.T
        vals = self.f.raw(X)
        if self.f.domain is not None:
            vals = np.where(np.asarray(self.f.domain(X), dtype=bool), vals, np.nan)
        return vals


def _dense_sphere(k: int) -> np.ndarray:
    return sphere_points(1024 if k == 2 else 256 * k, k)


def _local_sup(g, k: int, r: float, y0: np.ndarray, v0: float):
    """Polish a sphere maximizer of ``g`` starting from the dense-grid best point."""
    best_y, best_v = y0, v0
    if k == 2:
        th0 = math.atan2(y0[1], y0[0])
        step = 2 * np.pi / 1024
        res = minimize_scalar(lambda t: -float(g(r * np.array([[np.cos(t), np.sin(t)]]))[0]),
                              bounds=(th0 - step, th0 + step), method="bounded", options={"xatol": 1e-10})
        if np.isfinite(res.fun) and -res.fun > best_v:
            best_y, best_v = r * np.array([np.cos(res.x), np.sin(res.x)]), float(-res.fun)
        return best_y, best_v

    def neg(z):
        nz = np.linalg.norm(z)
        if nz == 0:
            return 1e300
        v = float(g((r * z / nz)[None, :])[0])
        return -v if np.isfinite(v) else 1e300

    with np.errstate(invalid="ignore"):
        res = minimize(neg, y0 / r, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 200 * k})
    if np.isfinite(res.fun) and -res.fun > best_v:
        z = res.x / np.linalg.norm(res.x)
        best_y, best_v = r * z, float(-res.fun)
    return best_y, best_v


def _verify(ev: _BallEvaluator, k: int, r: float, S: np.ndarray, uB: np.ndarray, scale: float):
    """Refit the envelope against the continuous sphere by cutting planes.

    Each round adds the worst dense-sphere violators as constraints. The final
    functional is lifted by the remaining (polished) boundary excess, so it
    dominates u on the whole sphere up to optimizer accuracy. Returns
    ``(l, lift)`` or None when the ball cannot be evaluated.
    """
    dense = r * _dense_sphere(k)
    ud = ev(dense)
    if np.any(np.isnan(ud)):
        return None
    pts, vals = r * S, uB
    thr = 1e-12 * scale
    for _ in range(MAX_CUTS):
        try:
            l = fit_affine_upper_envelope(pts, vals, np.zeros(k))
        except UnboundedLPError:
            return None
        excess = ud - l(dense)
        worst = np.argsort(-excess)[:2 * k]
        worst = worst[excess[worst] > thr]
        if worst.size == 0:
            break
        pts = np.concatenate([pts, dense[worst]])
        vals = np.concatenate([vals, ud[worst]])
    j = int(np.argmax(excess))
    y, gap = _local_sup(lambda Y: ev(Y) - l(Y), k, r, dense[j], float(excess[j]))
    if np.isnan(gap):
        return None
    lift = max(gap, 0.0)
    return l.shifted(lift), lift


def _search_slice(f: ScalarField, V: np.ndarray, index: int, centers: np.ndarray, box: np.ndarray,
                  budget: Budget, seed: int, tol: float) -> Witness | None:
    k = V.shape[1]
    S, D = _unit_samples(k, budget, seed, index)
    for c in centers:
        if f.domain is not None and not bool(np.asarray(f.domain(c[None, :]))[0]):
            continue
        r0 = 0.95 * _fit_radius(c, V, box)
        if f.clearance is not None:
            cl = float(np.asarray(f.clearance(c[None, :]))[0])
            if not cl > 0:
                continue
            r0 = min(r0, 0.95 * cl)
        if not (r0 > 0 and np.isfinite(r0)):
            continue
        ev = _BallEvaluator(f, c, V)
        for fac in RADIUS_FACTORS:
            r = r0 * fac
            uB = ev(r * S)
            uI = ev(r * D)
            if np.any(np.isnan(uB)) or np.any(np.isnan(uI)) or np.any(uB == np.inf) or np.any(uI == np.inf):
                continue
            fin = np.concatenate([uB[np.isfinite(uB)], uI[np.isfinite(uI)]])
            scale = float(max(1.0, np.max(np.abs(fin)))) if fin.size else 1.0
            try:
                l = fit_affine_upper_envelope(r * S, uB, np.zeros(k))
            except UnboundedLPError:
                continue
            gaps = uI - l(r * D)
            j = int(np.argmax(gaps))
            if not gaps[j] > tol * scale:
                continue
            bgap = 0.0
            if k > 1:
                checked = _verify(ev, k, r, S, uB, scale)
                if checked is None:
                    continue
                l, bgap = checked
                gaps = uI - l(r * D)
                j = int(np.argmax(gaps))
                if not gaps[j] > tol * scale:
                    continue
            ball = SliceBall(AffineSlice(c, V), np.zeros(k), float(r))
            return Witness(ball, l, r * D[j], float(gaps[j]), scale, float(bgap), index)
    return None


def witness_search(f: ScalarField, q: int, box=None, budget: Budget = DEFAULT_BUDGET, seed: int = 0,
                   tol: float = DEFAULT_INERTIA_TOL, threads: int = 1, guided: bool = True) -> Witness | None:
    """Search for a violation of real q-convexity; None means none found at this budget."""
    n = f.dim
    if q < 0:
        raise ValueError("q must be non-negative")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if q >= n:
        return None
    box = f.box if box is None else as_box(box, n)
    if not np.all(np.isfinite(box)):
        raise ValueError("witness search needs a bounded box")
    _check_sub_box(box, f.box)
    k = q + 1
    centers = coarse_centers(box)
    if budget.centers is not None:
        centers = centers[:max(1, budget.centers)]
    frames = slice_frames(f, k, centers, budget.slices, seed, guided)
    return _parallel.first_hit(
        lambda item: _search_slice(f, item[1], item[0], centers, box, budget, seed, tol),
        list(enumerate(frames)), threads)


# ---------------------------------------------------------------------------
# Largest second-order growth rate
# ---------------------------------------------------------------------------


def lambda_max_estimate(f: ScalarField, p, eps_list: Sequence[float] = DEFAULT_EPS) -> float:
    """Largest normalized second-order growth ``2(u(x+eh)-u(x)-e<grad u,h>)/e^2`` over sampled h."""
    p = np.asarray(p, dtype=float).reshape(f.dim)
    eps_list = [float(e) for e in eps_list]
    if not eps_list or min(eps_list) <= 0:
        raise ValueError("eps values must be positive")
    room = float(np.min(np.minimum(p - f.box[:, 0], f.box[:, 1] - p)))
    if max(eps_list) >= room:
        raise ValueError("eps values must be smaller than the distance to the box boundary")
    H = sphere_points(64 * f.dim, f.dim)
    # the growth quotient is still what is maximized; the FD Hessian only
    # proposes the likely maximizing direction
    if f.dim > 1:
        try:
            Hp = fd_hessian(f, p).matrix
            if np.all(np.isfinite(Hp)):
                top = jacobi_eigh(Hp, vectors=True)[1][:, -1]
                H = np.concatenate([H, top[None, :], -top[None, :]])
        except (EvaluationError, DomainError, ValueError):
            pass
    u0 = float(f.evaluate(p[None, :])[0])
    g = fd_gradient(f, p)
    best = -math.inf
    for e in eps_list:
        vals = f.evaluate(p + e * H)
        best = max(best, float(np.max(2 * (vals - u0 - e * (H @ g)) / e**2)))
    return best


# ---------------------------------------------------------------------------
# Supremum convolution and approximation from above
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Compactly supported bump with peak 1 at the origin and support radius ``radius``.

    ``L`` is a lower Hessian bound magnitude: ``g + L/2 |x|^2`` is convex.
    """

    radius: float
    profile: str = "poly"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("kernel radius must be positive")
        if self.profile not in ("poly", "bump"):
            raise ValueError("profile must be 'poly' or 'bump'")

    @property
    def L(self) -> float:
        # poly: min second derivative of (1-s)^2 profile is -4/r^2 at the origin;
        # bump: numerically 4.1589/r^2, rounded up
        return (4.0 if self.profile == "poly" else 4.159) / self.radius**2

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.sum(t * t, axis=-1) / self.radius**2
        inside = s < 1
        if self.profile == "poly":
            return np.where(inside, (1 - np.minimum(s, 1)) ** 2, 0.0)
        with np.errstate(divide="ignore", over="ignore"):
            val = np.exp(1 - 1 / (1 - np.where(inside, s, 0.0)))
        return np.where(inside, val, 0.0)

    def to_json(self) -> dict:
        return {"radius": self.radius, "profile": self.profile, "L": self.L}


@dataclass(frozen=True, eq=False)
class GridField:
    """Values on a regular grid; ``axes`` are the node coordinates per axis."""

    axes: tuple
    values: np.ndarray

    @classmethod
    def sample(cls, f: ScalarField, box, resolution) -> "GridField":
        box = as_box(box, f.dim)
        pts, axes = grid_points(box, resolution)
        vals = f.raw(pts)
        if np.any(np.isnan(vals)):
            raise EvaluationError("field is undefined at some grid node")
        return cls(tuple(axes), vals.reshape([len(a) for a in axes]))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def box(self) -> np.ndarray:
        return np.array([[a[0], a[-1]] for a in self.axes])

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def kernel_offsets(g: KernelSpec, spacing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer grid offsets with positive kernel weight, and those weights."""
    reach = [int(math.floor(g.radius / h)) for h in spacing]
    ranges = [range(-m, m + 1) for m in reach]
    offs = np.array(list(itertools.product(*ranges)), dtype=int)
    w = g(offs * spacing)
    keep = w > 0
    return offs[keep], w[keep]


def sup_convolve(u: GridField, g: KernelSpec, out_box=None) -> GridField:
    """Discrete supremum convolution ``max_y u(y) g(x - y)`` over grid nodes y."""
    vals = u.values
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise ValueError("sup-convolution needs a non-negative bounded grid field")
    box = u.box
    out_box = box + np.array([g.radius, -g.radius]) if out_box is None else as_box(out_box, u.dim)
    sel = []
    for a, (lo, hi) in zip(u.axes, out_box):
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        idx = np.nonzero((a >= lo - slack) & (a <= hi + slack))[0]
        if idx.size == 0:
            raise ValueError("output box is empty after shrinking by the kernel radius")
        sel.append(idx)
    offs, w = kernel_offsets(g, u.spacing)
    shape = tuple(len(s) for s in sel)
    out = np.zeros(shape)
    for m, wm in zip(offs, w):
        src = []
        valid = []
        for ax, (s, mi) in enumerate(zip(sel, m)):
            j = s - mi
            ok = (j >= 0) & (j < len(u.axes[ax]))
            src.append(np.clip(j, 0, len(u.axes[ax]) - 1))
            valid.append(ok)
        block = vals[np.ix_(*src)]
        mask = np.ones(shape, dtype=bool)
        for ax, ok in enumerate(valid):
            shp = [1] * len(shape)
            shp[ax] = -1
            mask &= ok.reshape(shp)
        out = np.maximum(out, np.where(mask, block * wm, 0.0))
    return GridField(tuple(u.axes[i][s] for i, s in enumerate(sel)), out)


def sup_convolution_field(u: ScalarField, g: KernelSpec, spacing, name: str = "") -> ScalarField:
    """Continuous analogue ``x -> max_t g(t) u(x - t)`` over grid offsets t of the given spacing.

    At grid nodes it coincides with ``sup_convolve`` of the sampled field. The
    kink oracle flags stencils on which the maximizing offset changes.
    """
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (u.dim,)).copy()
    offs, w = kernel_offsets(g, spacing)
    T = offs * spacing
    box = u.box + np.array([g.radius, -g.radius])
    if np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("field box too small for the kernel radius")

    def terms(X):
        X = np.asarray(X, dtype=float)
        return np.stack([wj * u.raw(X - t) for t, wj in zip(T, w)], axis=-1)

    def func(X):
        return np.max(terms(X), axis=-1)

    def kink(stencil):
        tv = terms(stencil)
        arg = np.argmax(tv, axis=-1)
        return np.any(arg != arg[:, :1], axis=1)

    return ScalarField(u.dim, func, box, "C0", name=name or f"supconv({u.name})", kink=kink)


@dataclass
class Approximation:
    grid: GridField
    u_values: np.ndarray
    min_margin: float
    dominated: bool
    offending: list | None
    k: int
    kernel: KernelSpec

    def to_json(self) -> dict:
        return {"k": self.k, "kernel": self.kernel.to_json(), "nodes": int(self.grid.values.size),
                "min_margin": self.min_margin, "dominated": self.dominated, "offending": self.offending,
                "box": self.grid.box.tolist()}


def approximate_from_above(u: ScalarField, box, k: int, g: KernelSpec, resolution=33) -> Approximation:
    """Grid approximant ``(max(u,-k)+k+1/k) * g - k``, checked to exceed u at every node."""
    if k < 1:
        raise ValueError("k must be >= 1")
    box = as_box(box, u.dim)
    _check_sub_box(box, u.box)
    if g.radius >= float(np.min(box[:, 1] - box[:, 0])) / 2:
        raise ValueError("kernel radius must be smaller than the box half-width")
    base = GridField.sample(u, box, resolution)
    if np.any(base.values == np.inf):
        raise EvaluationError("field takes the value +inf")
    v = GridField(base.axes, np.maximum(base.values, -k) + k + 1.0 / k)
    conv = sup_convolve(v, g)
    approx = GridField(conv.axes, conv.values - k)
    uv = u.raw(approx.points()).reshape(approx.values.shape)
    diff = approx.values - uv
    margin = float(np.min(diff))
    dominated = bool(np.all(diff > 0))
    offending = None
    if not dominated:
        j = int(np.argmin(diff.ravel()))
        offending = approx.points()[j].tolist()
    return Approximation(approx, uv, margin, dominated, offending, k, g)


# ---------------------------------------------------------------------------
# Gluing, composition, maxima, sums
# ---------------------------------------------------------------------------


class BoundaryConditionWarning(UserWarning):
    pass


def field_max(fields: Sequence[ScalarField], name: str = "") -> ScalarField:
    """Pointwise maximum with a kink oracle for switches of the active term."""
    dim = fields[0].dim
    lo = np.max([f.box[:, 0] for f in fields], axis=0)
    hi = np.min([f.box[:, 1] for f in fields], axis=0)
    raws = [f.raw for f in fields]

    def stack(X):
        return np.stack([r(X) for r in raws], axis=-1)

    def kink(stencil):
        arg = np.argmax(stack(stencil), axis=-1)
        return np.any(arg != arg[:, :1], axis=1)

    smooth = "C0"
    return ScalarField(dim, lambda X: np.max(stack(X), axis=-1), np.stack([lo, hi], axis=1), smooth,
                       name=name or "max(" + ", ".join(f.name for f in fields) + ")", kink=kink)


def glue(u: ScalarField, u1: ScalarField, omega1, check_box=None, samples: int = 64, seed: int = 0,
         tol: float = 1e-9) -> ScalarField:
    """``max(u, u1)`` on omega1 and ``u`` elsewhere.

    The boundary condition ``limsup u1 <= u`` on the boundary of omega1 is
    spot-checked at sampled boundary points; a violation emits a warning.
    """
    member = getattr(omega1, "member", None)
    if member is None:
        raise TypeError("omega1 must provide a membership test")
    if u.dim != u1.dim:
        raise ValueError("dimension mismatch")

    def func(X):
        X = np.asarray(X, dtype=float)
        m = np.asarray(member(X), dtype=bool)
        base = u.raw(X)
        with np.errstate(invalid="ignore"):
            return np.where(m, np.maximum(base, u1.raw(X)), base)

    def kink(stencil):
        m = np.asarray(member(stencil), dtype=bool)
        a = u1.raw(stencil) > u.raw(stencil)
        act = m & a
        return np.any(act != act[:, :1], axis=1) | np.any(m != m[:, :1], axis=1)

    out = ScalarField(u.dim, func, u.box, "C0", name=f"glue({u.name}, {u1.name})", kink=kink,
                      domain=u.domain, clearance=u.clearance)
    box = u.box if check_box is None else as_box(check_box, u.dim)
    if samples > 0 and np.all(np.isfinite(box)):
        from .sets import boundary_samples

        inner, bpts = boundary_samples(omega1, box, samples, seed)
        if len(bpts):
            inside = u.inside_box(bpts)
            lim = u1.raw(inner[inside])
            ub = u.raw(bpts[inside])
            bad = lim > ub + tol * np.maximum(1.0, np.abs(ub))
            if np.any(bad):
                warnings.warn(f"boundary condition fails at {int(np.sum(bad))} sampled points of the "
                              f"glued region's boundary", BoundaryConditionWarning, stacklevel=2)
    return out


def compose_increasing_convex(u: ScalarField, phi: ScalarField, box=None, resolution: int = 9) -> ScalarField:
    """``phi o u`` after spot-checking that phi is strictly increasing and strictly convex on u's range."""
    if phi.dim != 1:
        raise ValueError("phi must be a field of one variable")
    if box is None:
        box = np.clip(u.box, -1.0, 1.0)
    box = as_box(box, u.dim)
    res = max(2, min(resolution, int(round(4096 ** (1 / u.dim)))))
    pts, _ = grid_points(box, res)
    t = u.raw(pts)
    if np.any(np.isnan(t)):
        raise EvaluationError("u is undefined at a sample point")
    t = np.unique(t[np.isfinite(t)])
    if t.size:
        vals = phi.raw(t[:, None])
        if np.any(~np.isfinite(vals)) or np.any(~phi.inside_box(t[:, None])):
            bad = t[~np.isfinite(vals)][:1].tolist() or t[:1].tolist()
            raise EvaluationError(f"phi is undefined at attained value {bad}")
        eps = np.finfo(float).eps
        for ti, fi in zip(t, vals):
            d = 1e-3 * max(1.0, abs(ti))
            for _ in range(30):
                lo, hi = phi.raw(np.array([[ti - d], [ti + d]]))
                if np.isfinite(lo) and np.isfinite(hi):
                    break
                d /= 2
            else:
                raise EvaluationError(f"phi is undefined near {ti}")
            if not (hi > fi > lo):
                raise ValueError(f"phi is not strictly increasing near {ti}")
            if not (hi + lo - 2 * fi > 64 * eps * max(1.0, abs(fi))):
                raise ValueError(f"phi is not strictly convex near {ti}")
    smooth = min(u.smooth, phi.smooth, key=SMOOTHNESS.index)
    pf, uf = phi.func, u.func

    def func(X):
        return pf(np.asarray(uf(X), dtype=float)[..., None])

    return ScalarField(u.dim, func, u.box, smooth, name=f"phi({u.name})", domain=u.domain,
                       clearance=u.clearance, kink=u.kink)


@dataclass
class SumTheoremReport:
    points: np.ndarray
    neg1: np.ndarray
    neg2: np.ndarray
    neg_sum: np.ndarray
    status: list
    violations: list

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        ok = np.array([s == "ok" for s in self.status], dtype=bool)
        return {"holds": self.holds, "points_checked": int(np.sum(ok)),
                "violations": self.violations,
                "max_negatives": {"u1": _imax(self.neg1[ok]), "u2": _imax(self.neg2[ok]),
                                  "sum": _imax(self.neg_sum[ok])}}


def _imax(a) -> int | None:
    return int(np.max(a)) if len(a) else None


def check_sum_theorem(u1: ScalarField, u2: ScalarField, box, resolution=5, tol: float = DEFAULT_INERTIA_TOL,
                      threads: int = 1) -> SumTheoremReport:
    """Check ``neg(H_{u1+u2}) <= neg(H_{u1}) + neg(H_{u2})`` at every grid point."""
    if u1.smooth == "C0" or u2.smooth == "C0":
        raise ValueError("both summands must be C2")
    box = as_box(box, u1.dim)
    pts, _ = grid_points(box, resolution)
    b1 = fd_hessian_batch(u1, pts)
    b2 = fd_hessian_batch(u2, pts)
    s1 = inertia_scan(u1, pts, tol, matrices=(b1.matrices, b1.status))
    s2 = inertia_scan(u2, pts, tol, matrices=(b2.matrices, b2.status))
    status = [a if a != "ok" else b for a, b in zip(b1.status, b2.status)]
    bs = fd_hessian_batch(field_sum([u1, u2]), pts)
    status = [a if a != "ok" else b for a, b in zip(status, bs.status)]
    ss = inertia_scan(u1, pts, tol, matrices=(bs.matrices, status))
    violations = []
    for i, st in enumerate(status):
        if st == "ok" and ss.negatives[i] > s1.negatives[i] + s2.negatives[i]:
            violations.append({"point": pts[i].tolist(), "sum": int(ss.negatives[i]),
                               "u1": int(s1.negatives[i]), "u2": int(s2.negatives[i])})
    return SumTheoremReport(pts, s1.negatives, s2.negatives, ss.negatives, status, violations)
