"""Open sets in R^n with boundary distances, exhaustions and convexity checks.

Every model answers vectorized membership. Models built from primitives also
expose ``distance_terms``: an ``(N, T)`` array whose row minimum is the exact
Euclidean boundary distance. Switching the minimizing term across a finite
difference stencil marks a kink, which keeps Hessian-based checks away from
the seams of ``-ln d``. Sets without closed-form distances fall back to the
direction-sampled infimum ``d = inf_v R_v``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from ._sampling import sphere_points, uniform_sphere
from .core import DEFAULT_BUDGET, Budget, Witness, grid_points, witness_search
from .expr import ScalarField, compile_expr, fd_hessian, parse_expr, print_expr

MARCH_STEPS = 1024
BISECTION_STEPS = 60
DEFAULT_BRACKET = 16.0
DEFAULT_DIRECTIONS = 256
MEMBER_TOL = 1e-9


def _pts(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormSpec:
    """Euclidean, max, p-norm (p >= 1) or weighted Euclidean norm."""

    kind: str = "euclid"
    p: float = 2.0
    weights: tuple | None = ()

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in (() if self.weights is None else self.weights)))
        if self.kind not in ("euclid", "max", "p", "weighted"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "p" and not self.p >= 1:
            raise ValueError("p-norm needs p >= 1")
        if self.kind == "weighted" and (not self.weights or min(self.weights) <= 0):
            raise ValueError("weighted norm needs positive weights")

    def __call__(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if self.kind == "euclid":
            return np.linalg.norm(V, axis=-1)
        if self.kind == "max":
            return np.max(np.abs(V), axis=-1)
        if self.kind == "p":
            return np.sum(np.abs(V) ** self.p, axis=-1) ** (1 / self.p)
        w = np.asarray(self.weights, dtype=float)
        return np.sqrt(np.sum(w * V * V, axis=-1))


# ---------------------------------------------------------------------------
# Ray exits by marching
# ---------------------------------------------------------------------------


def march_exit(member: Callable[[np.ndarray], np.ndarray], X: np.ndarray, v: np.ndarray,
               bracket: float, steps: int = MARCH_STEPS) -> np.ndarray:
    """First exit distance along ``+v`` from each row of X, or +inf within ``bracket``.

    Marches in ``bracket/steps`` increments to the first non-member sample, then
    bisects 60 times. Boundary pieces thinner than one step can be missed.
    """
    X = _pts(X)
    N, n = X.shape
    h = bracket / steps
    out = np.full(N, np.inf)
    lo = np.zeros(N)
    hi = np.full(N, np.nan)
    chunk = max(1, (1 << 20) // max(1, N * n))
    todo = np.ones(N, dtype=bool)
    for start in range(1, steps + 1, chunk):
        js = np.arange(start, min(start + chunk, steps + 1))
        if not np.any(todo):
            break
        idx = np.nonzero(todo)[0]
        P = X[idx, None, :] + (js * h)[None, :, None] * v
        m = np.asarray(member(P.reshape(-1, n)), dtype=bool).reshape(len(idx), len(js))
        miss = ~m
        hit = np.any(miss, axis=1)
        first = np.argmax(miss, axis=1)
        for r in np.nonzero(hit)[0]:
            i = idx[r]
            hi[i] = js[first[r]] * h
            lo[i] = hi[i] - h
            todo[i] = False
    done = ~np.isnan(hi)
    if np.any(done):
        idx = np.nonzero(done)[0]
        a, b = lo[idx], hi[idx]
        for _ in range(BISECTION_STEPS):
            mid = (a + b) / 2
            m = np.asarray(member(X[idx] + mid[:, None] * v), dtype=bool)
            a = np.where(m, mid, a)
            b = np.where(m, b, mid)
        out[idx] = (a + b) / 2
    return out


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class OpenSetModel:
    """Base class. Subclasses implement ``member`` and ``margin``; primitives
    also ``distance_terms`` and ``exit_terms`` (exit distance along +v per term)."""

    dim: int
    exact_distance = False

    def member(self, X) -> np.ndarray:
        raise NotImplementedError

    def margin(self, X) -> np.ndarray:
        """Continuous membership margin: positive inside, zero on the boundary."""
        raise NotImplementedError

    def bbox(self) -> np.ndarray:
        b = np.empty((self.dim, 2))
        b[:, 0], b[:, 1] = -np.inf, np.inf
        return b

    def bracket(self) -> float:
        b = self.bbox()
        if np.all(np.isfinite(b)):
            return float(np.linalg.norm(b[:, 1] - b[:, 0]))
        return DEFAULT_BRACKET

    def distance_terms(self, X) -> np.ndarray | None:
        return None

    def exit_terms(self, X, v) -> np.ndarray | None:
        return None

    def exit_along(self, X, v, bracket: float | None = None, method: str = "auto") -> np.ndarray:
        """Distance to the boundary along the ray ``x + t v``, t > 0 (inf if none)."""
        X = _pts(X)
        v = np.asarray(v, dtype=float)
        if method == "auto":
            terms = self.exit_terms(X, v)
            if terms is not None:
                return np.min(terms, axis=1) if terms.shape[1] else np.full(len(X), np.inf)
        return march_exit(self.member, X, v, self.bracket() if bracket is None else bracket)

    def to_json(self):
        raise NotImplementedError

    def __repr__(self) -> str:
        return json.dumps(self.to_json())


def _ray_plus_minus(model: OpenSetModel, X: np.ndarray, v: np.ndarray):
    a = model.exit_terms(X, v)
    b = model.exit_terms(X, -v)
    if a is None or b is None:
        return None
    return np.concatenate([a, b], axis=1)


class HalfSpace(OpenSetModel):
    exact_distance = True

    def __init__(self, a, b: float):
        self.a = np.asarray(a, dtype=float).ravel()
        self.b = float(b)
        self.dim = self.a.size
        if not np.any(self.a):
            raise ValueError("half-space normal must be non-zero")

    def member(self, X):
        return _pts(X) @ self.a < self.b

    def margin(self, X):
        return (self.b - _pts(X) @ self.a) / np.linalg.norm(self.a)

    def distance_terms(self, X):
        return self.margin(X)[:, None]

    def exit_terms(self, X, v):
        av = float(self.a @ v)
        gap = self.b - _pts(X) @ self.a
        t = gap / av if av > 0 else np.full(len(gap), np.inf)
        return np.asarray(t, dtype=float)[:, None]

    def to_json(self):
        return {"half_space": {"a": self.a.tolist(), "b": self.b}}


class Ball(OpenSetModel):
    exact_distance = True

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).ravel()
        self.radius = float(radius)
        self.dim = self.center.size
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def member(self, X):
        return np.linalg.norm(_pts(X) - self.center, axis=1) < self.radius

    def margin(self, X):
        return self.radius - np.linalg.norm(_pts(X) - self.center, axis=1)

    def bbox(self):
        return np.stack([self.center - self.radius, self.center + self.radius], axis=1)

    def distance_terms(self, X):
        return self.margin(X)[:, None]

    def exit_terms(self, X, v):
        w = _pts(X) - self.center
        bv = w @ v
        disc = bv * bv - (np.sum(w * w, axis=1) - self.radius**2)
        t = -bv + np.sqrt(np.maximum(disc, 0.0))
        return np.where(t > 0, t, np.inf)[:, None]

    def to_json(self):
        return {"ball": {"center": self.center.tolist(), "radius": self.radius}}


class Box(OpenSetModel):
    """Product of open intervals; infinite sides allowed."""

    exact_distance = True

    def __init__(self, intervals):
        self.intervals = np.array([[_num(lo, -np.inf), _num(hi, np.inf)] for lo, hi in intervals], dtype=float)
        self.dim = self.intervals.shape[0]
        if np.any(self.intervals[:, 0] >= self.intervals[:, 1]):
            raise ValueError("box intervals must satisfy lo < hi")

    def member(self, X):
        X = _pts(X)
        return np.all((X > self.intervals[:, 0]) & (X < self.intervals[:, 1]), axis=1)

    def margin(self, X):
        t = self.distance_terms(X)
        return np.min(t, axis=1) if t.shape[1] else np.full(len(_pts(X)), np.inf)

    def bbox(self):
        return self.intervals.copy()

    def distance_terms(self, X):
        X = _pts(X)
        cols = []
        for i, (lo, hi) in enumerate(self.intervals):
            if np.isfinite(lo):
                cols.append(X[:, i] - lo)
            if np.isfinite(hi):
                cols.append(hi - X[:, i])
        return np.stack(cols, axis=1) if cols else np.zeros((len(X), 0))

    def exit_terms(self, X, v):
        X = _pts(X)
        cols = []
        for i, (lo, hi) in enumerate(self.intervals):
            with np.errstate(divide="ignore", invalid="ignore"):
                if np.isfinite(hi):
                    cols.append(np.where(v[i] > 0, (hi - X[:, i]) / v[i], np.inf))
                if np.isfinite(lo):
                    cols.append(np.where(v[i] < 0, (lo - X[:, i]) / v[i], np.inf))
        return np.stack(cols, axis=1) if cols else np.zeros((len(X), 0))

    def to_json(self):
        return {"box": [[_jnum(lo), _jnum(hi)] for lo, hi in self.intervals]}


class PuncturedAxis(OpenSetModel):
    """Points whose listed coordinates are all non-zero (products of punctured lines)."""

    exact_distance = True

    def __init__(self, axes, dim: int):
        axes = [axes] if np.isscalar(axes) else list(axes)
        self.axes = sorted(int(a) for a in axes)
        self.dim = int(dim)
        if not self.axes or min(self.axes) < 0 or max(self.axes) >= self.dim:
            raise ValueError("punctured axes must be valid coordinate indices")

    def member(self, X):
        return np.all(_pts(X)[:, self.axes] != 0, axis=1)

    def margin(self, X):
        return np.min(np.abs(_pts(X)[:, self.axes]), axis=1)

    def distance_terms(self, X):
        return np.abs(_pts(X)[:, self.axes])

    def exit_terms(self, X, v):
        X = _pts(X)
        cols = []
        for j in self.axes:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -X[:, j] / v[j] if v[j] != 0 else np.full(len(X), np.inf)
            cols.append(np.where(t > 0, t, np.inf))
        return np.stack(cols, axis=1)

    def to_json(self):
        axes = [a + 1 for a in self.axes]
        return {"punctured_axis": axes[0] if len(axes) == 1 else axes, "dim": self.dim}


class Intersection(OpenSetModel):
    def __init__(self, parts: Sequence[OpenSetModel]):
        if not parts:
            raise ValueError("intersection needs at least one part")
        self.parts = list(parts)
        self.dim = self.parts[0].dim
        if any(p.dim != self.dim for p in self.parts):
            raise ValueError("intersection parts differ in dimension")
        self.exact_distance = all(p.exact_distance for p in self.parts)

    def member(self, X):
        out = np.ones(len(_pts(X)), dtype=bool)
        for p in self.parts:
            out &= p.member(X)
        return out

    def margin(self, X):
        return np.min(np.stack([p.margin(X) for p in self.parts], axis=1), axis=1)

    def bbox(self):
        bs = np.stack([p.bbox() for p in self.parts])
        return np.stack([np.max(bs[:, :, 0], axis=0), np.min(bs[:, :, 1], axis=0)], axis=1)

    def distance_terms(self, X):
        ts = [p.distance_terms(X) for p in self.parts]
        if any(t is None for t in ts):
            return None
        return np.concatenate(ts, axis=1)

    def exit_terms(self, X, v):
        ts = [p.exit_terms(X, v) for p in self.parts]
        if any(t is None for t in ts):
            return None
        return np.concatenate(ts, axis=1)

    def to_json(self):
        return {"intersection": [p.to_json() for p in self.parts]}


class Union(OpenSetModel):
    def __init__(self, parts: Sequence[OpenSetModel]):
        if not parts:
            raise ValueError("union needs at least one part")
        self.parts = list(parts)
        self.dim = self.parts[0].dim
        if any(p.dim != self.dim for p in self.parts):
            raise ValueError("union parts differ in dimension")

    def member(self, X):
        out = np.zeros(len(_pts(X)), dtype=bool)
        for p in self.parts:
            out |= p.member(X)
        return out

    def margin(self, X):
        return np.max(np.stack([p.margin(X) for p in self.parts], axis=1), axis=1)

    def bbox(self):
        bs = np.stack([p.bbox() for p in self.parts])
        return np.stack([np.min(bs[:, :, 0], axis=0), np.max(bs[:, :, 1], axis=0)], axis=1)

    def to_json(self):
        return {"union": [p.to_json() for p in self.parts]}


class GraphComplement(OpenSetModel):
    """Complement in R^{n+k} of the graph of f: R^n -> R^k; points are (x, y)."""

    def __init__(self, exprs: Sequence[str], n: int):
        self.exprs = [str(e) for e in exprs]
        self.n = int(n)
        self.k = len(self.exprs)
        if self.k < 1:
            raise ValueError("need at least one component function")
        self.nodes = [parse_expr(e, self.n) for e in self.exprs]
        self.funcs = [compile_expr(nd) for nd in self.nodes]
        self.dim = self.n + self.k

    def f(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            return np.stack([np.broadcast_to(fn(x), x.shape[:-1]) for fn in self.funcs], axis=-1)

    def residual(self, X) -> np.ndarray:
        X = _pts(X)
        return self.f(X[:, :self.n]) - X[:, self.n:]

    def member(self, X):
        return np.linalg.norm(self.residual(X), axis=1) > 0

    def margin(self, X):
        return np.linalg.norm(self.residual(X), axis=1)

    def distance(self, X) -> np.ndarray:
        """Euclidean distance to the graph by local minimization over the base point."""
        X = _pts(X)
        out = np.empty(len(X))
        for i, p in enumerate(X):
            x, y = p[:self.n], p[self.n:]

            def obj(z):
                r = self.f(z) - y
                return float(np.sum((z - x) ** 2) + np.sum(r * r))

            best = math.sqrt(obj(x))
            for off in (0.0, 0.5, -0.5, 1.0, -1.0):
                z0 = x + off
                res = minimize(obj, z0, method="BFGS", options={"gtol": 1e-12})
                if np.isfinite(res.fun):
                    best = min(best, math.sqrt(max(res.fun, 0.0)))
            out[i] = best
        return out

    def distance_terms(self, X):
        return self.distance(X)[:, None]

    def exit_along(self, X, v, bracket: float | None = None, method: str = "auto"):
        X = _pts(X)
        v = np.asarray(v, dtype=float)
        bracket = self.bracket() if bracket is None else bracket
        if self.k == 1:
            return _march_side(self, X, v, bracket)
        out = np.full(len(X), np.inf)
        ts = np.linspace(0, bracket, MARCH_STEPS + 1)[1:]
        for i, p in enumerate(X):
            P = p + ts[:, None] * v
            r = np.linalg.norm(self.residual(P), axis=1)
            j = int(np.argmin(r))
            lo, hi = ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
            res = minimize(lambda t: float(np.linalg.norm(self.residual(p + t[0] * v))), [ts[j]],
                           method="Nelder-Mead", options={"xatol": 1e-13, "fatol": 1e-15})
            tb = float(res.x[0])
            if lo <= tb <= hi and res.fun <= 1e-10 * max(1.0, float(np.linalg.norm(p))):
                out[i] = tb
        return out

    def to_json(self):
        return {"graph_complement": {"f": list(self.exprs), "n": self.n}}


def _march_side(g: GraphComplement, X: np.ndarray, v: np.ndarray, bracket: float) -> np.ndarray:
    """Exit along +v for a hypersurface graph: first sign change of the residual."""
    out = np.empty(len(X))
    for i, p in enumerate(X):
        s0 = np.sign(g.residual(p[None, :])[0, 0])
        out[i] = march_exit(lambda P: np.sign(g.residual(P)[:, 0]) == s0, p[None, :], v, bracket)[0]
    return out


class ReinhardtLog(OpenSetModel):
    """Log-image domain in C^n = R^{2n}: all |z_j| > 0 and (ln|z_1|, ..., ln|z_n|) in V."""

    def __init__(self, V: OpenSetModel):
        self.V = V
        self.n = V.dim
        self.dim = 2 * V.dim

    def moduli(self, X) -> np.ndarray:
        X = _pts(X)
        return np.hypot(X[:, :self.n], X[:, self.n:])

    def member(self, X):
        r = self.moduli(X)
        ok = np.all(r > 0, axis=1)
        with np.errstate(divide="ignore"):
            logs = np.log(np.where(ok[:, None], r, 1.0))
        return ok & self.V.member(logs)

    def margin(self, X):
        r = self.moduli(X)
        ok = np.all(r > 0, axis=1)
        with np.errstate(divide="ignore"):
            logs = np.log(np.where(ok[:, None], r, 1.0))
        return np.where(ok, np.minimum(self.V.margin(logs), np.min(r, axis=1)), 0.0)

    def bbox(self):
        vb = self.V.bbox()
        R = np.exp(vb[:, 1])
        return np.concatenate([np.stack([-R, R], axis=1)] * 2)

    def to_json(self):
        return {"reinhardt_log": self.V.to_json()}


class Oracle(OpenSetModel):
    """``{x in bbox : g(x) < 0}`` with an optional closed-form boundary distance."""

    def __init__(self, dim: int, expr: str, bbox, dist: str | None = None):
        self.dim = int(dim)
        self.expr = expr
        self.node = parse_expr(expr, self.dim)
        self.g = compile_expr(self.node)
        self.box = Box(bbox)
        if not np.all(np.isfinite(self.box.intervals)):
            raise ValueError("oracle sets need a bounded bounding box")
        self.dist_expr = dist
        self.dist_fn = compile_expr(parse_expr(dist, self.dim)) if dist else None
        self.exact_distance = dist is not None

    def _g(self, X):
        X = _pts(X)
        with np.errstate(all="ignore"):
            return np.broadcast_to(self.g(X), (len(X),))

    def member(self, X):
        return self.box.member(X) & (self._g(X) < 0)

    def margin(self, X):
        return np.minimum(-self._g(X), self.box.margin(X))

    def bbox(self):
        return self.box.intervals.copy()

    def distance_terms(self, X):
        if self.dist_fn is None:
            return None
        X = _pts(X)
        with np.errstate(all="ignore"):
            d = np.broadcast_to(self.dist_fn(X), (len(X),))
        return np.concatenate([d[:, None], self.box.distance_terms(X)], axis=1)

    def to_json(self):
        body = {"dim": self.dim, "expr": self.expr, "bbox": self.box.to_json()["box"]}
        if self.dist_expr:
            body["dist"] = self.dist_expr
        return {"oracle": body}


def _num(v, default):
    if v is None:
        return default
    return float(v)


def _jnum(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def set_from_json(obj) -> OpenSetModel:
    """Build a model from its tagged-union JSON form."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    if not isinstance(obj, dict):
        raise ValueError("a set must be a JSON object")
    keys = [k for k in obj if k != "dim"]
    if len(keys) != 1:
        raise ValueError(f"a set needs exactly one variant key, got {keys}")
    tag = keys[0]
    body = obj[tag]
    if tag == "half_space":
        return HalfSpace(body["a"], body["b"])
    if tag == "ball":
        return Ball(body["center"], body["radius"])
    if tag == "box":
        return Box(body)
    if tag == "punctured_axis":
        axes = [body] if isinstance(body, int) else list(body)
        if "dim" not in obj:
            raise ValueError("punctured_axis needs a 'dim' field")
        return PuncturedAxis([a - 1 for a in axes], int(obj["dim"]))
    if tag == "graph_complement":
        return GraphComplement(body["f"], int(body["n"]))
    if tag == "reinhardt_log":
        return ReinhardtLog(set_from_json(body))
    if tag == "intersection":
        return Intersection([set_from_json(p) for p in body])
    if tag == "union":
        return Union([set_from_json(p) for p in body])
    if tag == "oracle":
        return Oracle(int(body["dim"]), body["expr"], body["bbox"], body.get("dist"))
    raise ValueError(f"unknown set variant {tag!r}")


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def member(s: OpenSetModel, x) -> bool:
    return bool(s.member(np.asarray(x, dtype=float)[None, :])[0])


def _direction_set(n: int, count: int, seed: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0]])
    det = sphere_points(max(1, count // 2), n)
    rng = np.random.default_rng([seed, 2])
    return np.concatenate([det, uniform_sphere(rng, count - len(det), n)])


def directional_distance(s: OpenSetModel, X, v, bracket: float | None = None, method: str = "auto") -> np.ndarray:
    """``R_v`` for each row of X: the nearer of the exits along +v and -v."""
    v = np.asarray(v, dtype=float)
    return np.minimum(s.exit_along(X, v, bracket, method), s.exit_along(X, -v, bracket, method))


def sampled_distance(s: OpenSetModel, X, nrm: NormSpec | None = None, directions: int = DEFAULT_DIRECTIONS,
                     seed: int = 0, bracket: float | None = None, method: str = "auto") -> np.ndarray:
    """``min_v R_v(x) * ||v||`` over a fixed direction set (an upper estimate of the distance)."""
    X = _pts(X)
    V = _direction_set(s.dim, directions, seed)
    nv = (nrm or NormSpec())(V)
    out = np.full(len(X), np.inf)
    for v, w in zip(V, nv):
        out = np.minimum(out, directional_distance(s, X, v, bracket, method) * w)
    return out


def dist_euclid(s: OpenSetModel, x) -> float:
    """Euclidean distance from a member point to the boundary (+inf if there is none)."""
    x = np.asarray(x, dtype=float).reshape(s.dim)
    if not member(s, x):
        raise ValueError(f"point {x.tolist()} is not in the set")
    return float(euclid_distances(s, x[None, :])[0])


def euclid_distances(s: OpenSetModel, X) -> np.ndarray:
    X = _pts(X)
    t = s.distance_terms(X)
    if t is not None:
        return np.min(t, axis=1) if t.shape[1] else np.full(len(X), np.inf)
    return sampled_distance(s, X)


def dist_directional(s: OpenSetModel, x, v, bracket: float | None = None, method: str = "auto") -> float:
    x = np.asarray(x, dtype=float).reshape(s.dim)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if not member(s, x):
        raise ValueError(f"point {x.tolist()} is not in the set")
    return float(directional_distance(s, x[None, :], v, bracket, method)[0])


def dist_norm(s: OpenSetModel, x, nrm: NormSpec = NormSpec(), directions: int = 4096, seed: int = 0) -> float:
    x = np.asarray(x, dtype=float).reshape(s.dim)
    if not member(s, x):
        raise ValueError(f"point {x.tolist()} is not in the set")
    return float(sampled_distance(s, x[None, :], nrm, directions, seed)[0])


# ---------------------------------------------------------------------------
# Fields derived from distances
# ---------------------------------------------------------------------------


def _neg_log(d: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > 0, -np.log(np.where(d > 0, d, 1.0)), np.where(d == 0, np.inf, np.nan))


def _argmin_kink(terms_fn):
    def kink(stencil):
        N, S, n = stencil.shape
        t = terms_fn(stencil.reshape(-1, n))
        if t is None or t.shape[1] <= 1:
            return np.zeros(N, dtype=bool)
        arg = np.argmin(t, axis=1).reshape(N, S)
        return np.any(arg != arg[:, :1], axis=1)
    return kink


def _member_domain(s: OpenSetModel):
    def domain(X):
        X = np.asarray(X, dtype=float)
        return s.member(X.reshape(-1, s.dim)).reshape(X.shape[:-1])
    return domain


def _flat(fn, dim):
    def wrapped(X):
        X = np.asarray(X, dtype=float)
        return np.asarray(fn(X.reshape(-1, dim))).reshape(X.shape[:-1])
    return wrapped


def neg_log_dist_field(s: OpenSetModel, kind="euclid", directions: int = DEFAULT_DIRECTIONS,
                       seed: int = 0) -> ScalarField:
    """``x -> -ln dist(x)`` on the set; infinite distance gives -inf.

    ``kind`` is "euclid", ``("directional", v)`` or ``("norm", NormSpec)``.
    """
    n = s.dim
    clear = _flat(lambda X: euclid_distances(s, X), n)
    if kind == "euclid":
        if s.distance_terms(np.zeros((1, n))) is not None:
            terms = s.distance_terms
        else:
            V = _direction_set(n, directions, seed)

            def terms(X):
                return np.stack([directional_distance(s, X, v) for v in V], axis=1)

            clear = _flat(lambda X: np.min(terms(X), axis=1), n)
        name = "-ln d2"
    elif isinstance(kind, tuple) and kind[0] == "directional":
        v = np.asarray(kind[1], dtype=float)
        v = v / np.linalg.norm(v)
        if s.exit_terms(np.zeros((1, n)), v) is not None:
            def terms(X):
                return _ray_plus_minus(s, _pts(X), v)
        else:
            def terms(X):
                return directional_distance(s, X, v)[:, None]
        name = f"-ln R_v, v={np.round(v, 6).tolist()}"
    elif isinstance(kind, tuple) and kind[0] == "norm":
        nrm = kind[1]
        V = _direction_set(n, directions, seed)
        w = nrm(V)

        def terms(X):
            return np.stack([directional_distance(s, X, v) * wi for v, wi in zip(V, w)], axis=1)

        name = f"-ln d_{nrm.kind}"
    else:
        raise ValueError(f"unsupported distance kind {kind!r}")

    def func(X):
        t = terms(X)
        d = np.min(t, axis=1) if t.shape[1] else np.full(len(t), np.inf)
        return _neg_log(d)

    return ScalarField(n, _flat(func, n), s.bbox(), "C0", name=name, domain=_member_domain(s),
                       clearance=clear, kink=_argmin_kink(terms))


def exhaustion_field(s: OpenSetModel) -> ScalarField:
    """``-ln d2(x) + |x|^2``; its sublevel sets are relatively compact in the set."""
    n = s.dim
    base = neg_log_dist_field(s)
    if s.distance_terms(np.zeros((1, n))) is None and not np.all(np.isfinite(s.bbox())):
        raise ValueError("exhaustion needs an exact distance or a bounded set")
    inner = base.func

    def func(X):
        X = np.asarray(X, dtype=float)
        return inner(X) + np.sum(X * X, axis=-1)

    return base.with_hooks(func=func, name="-ln d2 + |x|^2")


@dataclass
class CompactnessReport:
    level: float
    points_in_sublevel: int
    min_distance: float
    distance_floor: float
    touches_scan_edge: bool

    @property
    def relatively_compact(self) -> bool:
        return (not self.touches_scan_edge) and self.min_distance >= self.distance_floor * (1 - 1e-12)

    def to_json(self) -> dict:
        return {"level": self.level, "points_in_sublevel": self.points_in_sublevel,
                "min_distance": self.min_distance, "distance_floor": self.distance_floor,
                "touches_scan_edge": self.touches_scan_edge, "relatively_compact": self.relatively_compact}


def sublevel_compactness(s: OpenSetModel, level: float, box, resolution=41) -> CompactnessReport:
    """Grid scan of ``{exhaustion < level}``: it must stay off the scan box edge and
    keep boundary distance at least ``exp(-level)``."""
    ex = exhaustion_field(s)
    box = np.asarray(box, dtype=float)
    pts, axes = grid_points(box, resolution)
    m = s.member(pts)
    vals = np.full(len(pts), np.inf)
    vals[m] = ex.raw(pts[m])
    sub = vals < level
    d = euclid_distances(s, pts[sub]) if np.any(sub) else np.zeros(0)
    edge = np.any((pts == box[:, 0]) | (pts == box[:, 1]), axis=1)
    return CompactnessReport(float(level), int(np.sum(sub)), float(np.min(d)) if d.size else math.inf,
                             math.exp(-level), bool(np.any(sub & edge)))


@dataclass
class SetCheck:
    q: int
    verdict: str
    witness: Witness | None
    box: list

    @property
    def consistent(self) -> bool:
        return self.witness is None

    def to_json(self) -> dict:
        return {"q": self.q, "verdict": self.verdict, "consistent": self.consistent, "box": self.box,
                "witness": None if self.witness is None else self.witness.to_json()}


CONSISTENT = "consistent with real q-convexity at resolution"
VIOLATED = "not real q-convex at resolution"


def set_q_convex_check(s: OpenSetModel, q: int, box, budget: Budget = DEFAULT_BUDGET, seed: int = 0,
                       tol: float = 1e-7, threads: int = 1, field: ScalarField | None = None) -> SetCheck:
    """Witness search on ``-ln d2`` restricted to members of the set."""
    f = neg_log_dist_field(s) if field is None else field
    box = np.asarray(box, dtype=float)
    f = f.with_hooks(box=_widen(f.box, box))
    w = witness_search(f, q, box, budget, seed, tol, threads)
    return SetCheck(q, VIOLATED if w is not None else CONSISTENT, w, box.tolist())


def _widen(fbox: np.ndarray, box: np.ndarray) -> np.ndarray:
    # the search box may poke outside a bounded set; membership filtering handles it
    return np.stack([np.minimum(fbox[:, 0], box[:, 0]), np.maximum(fbox[:, 1], box[:, 1])], axis=1)


def boundary_samples(s: OpenSetModel, box, count: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (inner point, boundary point) found by shooting seeded rays from member points."""
    box = np.asarray(box, dtype=float)
    rng = np.random.default_rng([seed, 3])
    P = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((8 * count, s.dim))
    P = P[s.member(P)][:count]
    if len(P) == 0:
        return np.zeros((0, s.dim)), np.zeros((0, s.dim))
    V = uniform_sphere(rng, len(P), s.dim)
    br = float(np.linalg.norm(box[:, 1] - box[:, 0]))
    inner, bnd = [], []
    for p, v in zip(P, V):
        t = float(s.exit_along(p[None, :], v, br)[0])
        if np.isfinite(t):
            bnd.append(p + t * v)
            inner.append(p + (t - 1e-7 * max(1.0, t)) * v)
    return np.array(inner).reshape(-1, s.dim), np.array(bnd).reshape(-1, s.dim)


# ---------------------------------------------------------------------------
# Continuity principle and graph complements
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlanarFamily:
    """Sets ``A_t = psi(t, P)`` for parameters P in a k-dimensional box, t in [0, 1]."""

    k: int
    dim: int
    psi: Callable[[float, np.ndarray], np.ndarray]
    param_box: np.ndarray
    info: dict = field(default_factory=dict)

    def points(self, t: float, S: np.ndarray) -> np.ndarray:
        return np.asarray(self.psi(float(t), np.atleast_2d(S)), dtype=float)


@dataclass
class ContinuityVerdict:
    status: str  # "holds" | "violated" | "inapplicable"
    t_star: float | None = None
    point: list | None = None
    params: list | None = None
    margin: float | None = None
    trace: list = field(default_factory=list)
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_json(self) -> dict:
        return {"status": self.status, "t_star": self.t_star, "point": self.point, "params": self.params,
                "margin": self.margin, "trace": self.trace, "reason": self.reason}


def _param_grid(box: np.ndarray, steps: int) -> np.ndarray:
    return grid_points(box, steps)[0]


def _param_boundary(box: np.ndarray, steps: int) -> np.ndarray:
    G = _param_grid(box, steps)
    on = np.any(np.isclose(G, box[:, 0]) | np.isclose(G, box[:, 1]), axis=1)
    return G[on]


def continuity_principle_test(s: OpenSetModel, fam: PlanarFamily, t_steps: int = 33,
                              s_steps: int = 33) -> ContinuityVerdict:
    """Check the hypotheses (A_t and its boundary in the set for sampled t < 1,
    boundary of A_1 in the set), then look for a point of A_1 outside the set."""
    box = np.asarray(fam.param_box, dtype=float)
    G = _param_grid(box, s_steps)
    Bd = _param_boundary(box, s_steps)
    for t in np.linspace(0.0, 1.0, t_steps)[:-1]:
        P = fam.points(t, G)
        m = s.member(P)
        if not np.all(m):
            j = int(np.argmin(m))
            return ContinuityVerdict("inapplicable", float(t), P[j].tolist(), G[j].tolist(),
                                     reason=f"A_t leaves the set at t={t:.6g}")
    P1b = fam.points(1.0, Bd)
    mb = s.member(P1b)
    if not np.all(mb):
        j = int(np.argmin(mb))
        return ContinuityVerdict("inapplicable", 1.0, P1b[j].tolist(), Bd[j].tolist(),
                                 reason="boundary of A_1 leaves the set")
    P1 = fam.points(1.0, G)
    marg = s.margin(P1)
    j = int(np.argmin(marg))
    best_s, best_m = G[j], float(marg[j])
    lo, hi = box[:, 0], box[:, 1]

    def obj(z):
        z = np.clip(z, lo, hi)
        return float(s.margin(fam.points(1.0, z[None, :]))[0])

    if np.isfinite(best_m):
        with np.errstate(invalid="ignore"):
            res = minimize(obj, best_s, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
    if np.isfinite(best_m) and res.fun < best_m:
        best_s, best_m = np.clip(res.x, lo, hi), float(res.fun)
    p = fam.points(1.0, best_s[None, :])[0]
    violated = (not bool(s.member(p[None, :])[0])) or best_m <= MEMBER_TOL
    trace = []
    for t in np.linspace(0.0, 1.0, t_steps):
        q = fam.points(t, best_s[None, :])
        trace.append({"t": float(t), "member": bool(s.member(q)[0]), "margin": float(s.margin(q)[0])})
    if violated:
        return ContinuityVerdict("violated", 1.0, p.tolist(), best_s.tolist(), best_m, trace,
                                 "A_1 reaches the complement")
    return ContinuityVerdict("holds", None, None, None, best_m, trace, "no violation at sampled resolution")


def _as_graph(f, n: int | None) -> GraphComplement:
    if isinstance(f, GraphComplement):
        return f
    if isinstance(f, str):
        f = [f]
    if n is None:
        raise ValueError("base dimension n is required for expression lists")
    return GraphComplement(f, n)


def graph_complement_family(f, x1, x2, t0: float = 0.0, n: int | None = None, refine: bool = True,
                            tol: float = 1e-9) -> PlanarFamily:
    """Family of k-planar sets in the complement of the graph of a non-affine f.

    Along the segment x(t) = (1-t)/2 x1 + (1+t)/2 x2 (t in [-1,1]) some component
    f_j deviates from its chord. The planar sets sit above (or below) the chord at
    height r, with the other components free in a box around f(x0); as r goes
    from 2 r0 down to r0 the sets first touch the graph at x0.
    """
    g = _as_graph(f, n)
    x1 = np.asarray(x1, dtype=float).reshape(g.n)
    x2 = np.asarray(x2, dtype=float).reshape(g.n)

    def seg(t):
        t = np.asarray(t, dtype=float)[..., None]
        return (1 - t) / 2 * x1 + (1 + t) / 2 * x2

    f1, f2 = g.f(x1), g.f(x2)

    def gap(j, sign, t):
        t = np.asarray(t, dtype=float)
        chord = (1 - t) / 2 * f1[j] + (1 + t) / 2 * f2[j]
        return sign * (g.f(seg(t))[..., j] - chord)

    ts = np.linspace(-1, 1, 2001)
    choice = None
    for j in range(g.k):
        for sign in (1.0, -1.0):
            gv = gap(j, sign, t0)
            scale = max(1.0, float(np.max(np.abs(g.f(seg(ts))[:, j]))))
            if gv > tol * scale:
                choice = (j, sign)
                break
        if choice:
            break
    if choice is None:
        raise ValueError("no component deviates from its chord at t0; f looks affine on this segment")
    j, sign = choice
    tstar = float(t0)
    if refine:
        vals = gap(j, sign, ts)
        i = int(np.argmax(vals))
        res = minimize(lambda z: -float(gap(j, sign, np.clip(z[0], -1, 1))), [ts[i]], method="Nelder-Mead",
                       options={"xatol": 1e-14, "fatol": 1e-16})
        tstar = float(np.clip(res.x[0], -1, 1)) if -res.fun >= vals[i] else float(ts[i])
    x0 = seg(tstar)
    fx0 = g.f(x0)
    r0 = float(gap(j, sign, tstar))
    chord0 = float((1 - tstar) / 2 * f1[j] + (1 + tstar) / 2 * f2[j])
    others = [i for i in range(g.k) if i != j]
    osc = 0.0
    if others:
        osc = float(np.max(np.abs(g.f(seg(ts))[:, others] - fx0[others])))
    rho = 1.0 + 2.0 * osc
    kdim = g.k
    pbox = np.array([[-1.0, 1.0]] + [[-rho, rho]] * (kdim - 1))

    def psi(tau: float, S: np.ndarray) -> np.ndarray:
        r = 2 * r0 - tau * r0
        sig = S[:, 0]
        x = seg(sig)
        y = np.empty((len(S), kdim))
        chord = (1 - sig) / 2 * f1[j] + (1 + sig) / 2 * f2[j]
        y[:, j] = chord + sign * r
        for c, i in enumerate(others):
            y[:, i] = fx0[i] + S[:, 1 + c]
        return np.concatenate([x.reshape(len(S), g.n), y], axis=1)

    info = {"component": j + 1, "sign": sign, "t0": tstar, "x0": np.atleast_1d(x0).tolist(),
            "y0": chord0 if kdim == 1 else fx0.tolist(), "r0": r0, "rho": rho,
            "touch_point": np.concatenate([np.atleast_1d(x0), fx0]).tolist()}
    return PlanarFamily(kdim, g.dim, psi, pbox, info)


def graph_complement_exhaustion(f, n: int | None = None, check_points: int = 5) -> ScalarField:
    """``(x, y) -> -ln |f(x) - y| + |(x, y)|^2`` on the complement of an affine graph."""
    g = _as_graph(f, n)
    rng = np.random.default_rng([0, 4])
    for e in g.exprs:
        comp = ScalarField.from_expr(e, g.n)
        for p in rng.uniform(-1, 1, (check_points, g.n)):
            if np.max(np.abs(fd_hessian(comp, p).matrix)) > 1e-6:
                raise ValueError(f"component {e!r} is not affine")
    grads = np.array([[float(v) for v in _affine_grad(e, g.n)] for e in g.exprs])
    lip = float(np.linalg.norm(grads, 2)) if grads.size else 0.0

    def func(X):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, g.dim)
        r = np.linalg.norm(g.residual(flat), axis=1)
        return (_neg_log(r) + np.sum(flat * flat, axis=1)).reshape(X.shape[:-1])

    def clearance(X):
        return np.linalg.norm(g.residual(_pts(X)), axis=1) / math.sqrt(1 + lip**2)

    return ScalarField(g.dim, func, None, "Cinf", name="-ln|f(x)-y| + |(x,y)|^2",
                       domain=_member_domain(g), clearance=clearance)


def _affine_grad(expr: str, n: int) -> np.ndarray:
    from .expr import fd_gradient

    return fd_gradient(ScalarField.from_expr(expr, n), np.zeros(n))
