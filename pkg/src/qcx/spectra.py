"""Dense symmetric/Hermitian eigenvalues, inertia counting, and a small LP.

Everything here is written for the tiny matrices this package produces
(order at most a few dozen), where cyclic Jacobi is simple and robust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 30
DEFAULT_INERTIA_TOL = 1e-7
PAIRING_TOL = 1e-9


class ConvergenceError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class PairingError(ArithmeticError):
    pass


class UnboundedLPError(ArithmeticError):
    pass


class InfeasibleLPError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Jacobi
# ---------------------------------------------------------------------------


def _offdiag_norm(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    off = a * (1.0 - np.eye(n))
    return np.sqrt(np.sum(off * off, axis=(-2, -1)))


def jacobi_eigh(m: np.ndarray, vectors: bool = False, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi on a stack of symmetric matrices ``(..., n, n)``.

    Returns ascending eigenvalues, plus column eigenvectors when ``vectors``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError("expected square matrices")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if not np.array_equal(m, np.swapaxes(m, -1, -2)):
        raise ValueError("matrix is not exactly symmetric")
    lead = m.shape[:-2]
    n = m.shape[-1]
    a = m.reshape(-1, n, n).copy()
    N = a.shape[0]
    v = np.broadcast_to(np.eye(n), (N, n, n)).copy() if vectors else None
    target = tol * np.sqrt(np.sum(a * a, axis=(1, 2)))
    rows = np.arange(N)
    sweeps = 0
    while True:
        off = _offdiag_norm(a)
        active = off > target
        if not np.any(active):
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", float(np.max(off[active])))
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                rot = np.abs(apq) > 0
                if not np.any(rot):
                    continue
                app, aqq = a[:, p, p], a[:, q, q]
                safe = np.where(rot, apq, 1.0)
                with np.errstate(over="ignore", divide="ignore"):
                    theta = (aqq - app) / (2 * safe)
                    t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0, 1.0, t)
                t = np.where(rot, t, 0.0)
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                a[rows, p, q] = 0.0
                a[rows, q, p] = 0.0
                if vectors:
                    vp = v[:, :, p].copy()
                    vq = v[:, :, q].copy()
                    v[:, :, p] = c[:, None] * vp - s[:, None] * vq
                    v[:, :, q] = s[:, None] * vp + c[:, None] * vq
    w = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1).reshape(lead + (n,))
    if not vectors:
        return w
    v = np.take_along_axis(v, order[:, None, :], axis=2).reshape(lead + (n, n))
    return w, v


def eig_symmetric(m) -> np.ndarray:
    """Ascending eigenvalues of one real symmetric matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("expected a single matrix")
    return jacobi_eigh(m)


def hermitian_embedding(m: np.ndarray) -> np.ndarray:
    re, im = m.real, m.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def eig_hermitian(m) -> np.ndarray:
    """Ascending eigenvalues of Hermitian matrices ``(..., n, n)`` via the real embedding."""
    m = np.asarray(m, dtype=complex)
    if not np.array_equal(m, np.conj(np.swapaxes(m, -1, -2))):
        raise ValueError("matrix is not exactly Hermitian")
    emb = hermitian_embedding(m)
    emb = (emb + np.swapaxes(emb, -1, -2)) / 2
    w = jacobi_eigh(emb)
    first, second = w[..., 0::2], w[..., 1::2]
    scale = np.maximum(1.0, np.max(np.abs(m), axis=(-2, -1)) if m.size else 1.0)
    gap = np.max(np.abs(first - second), axis=-1)
    if np.any(gap > PAIRING_TOL * scale * max(1, m.shape[-1])):
        raise PairingError(f"embedded eigenvalues fail to pair (gap {float(np.max(gap)):.3e})")
    return (first + second) / 2


# ---------------------------------------------------------------------------
# Inertia
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Inertia:
    negatives: int
    zeros: int
    positives: int
    tol: float

    @property
    def n(self) -> int:
        return self.negatives + self.zeros + self.positives

    @property
    def strict_index(self) -> int:
        """Non-positive eigenvalue count (zeros count against strictness)."""
        return self.negatives + self.zeros

    def to_json(self) -> dict:
        return {"negatives": self.negatives, "zeros": self.zeros, "positives": self.positives, "tol": self.tol}


def spectral_scale(eigs) -> float:
    eigs = np.asarray(eigs, dtype=float)
    return float(max(1.0, np.max(np.abs(eigs)))) if eigs.size else 1.0


def inertia(eigs, scale: float | None = None, tol: float = DEFAULT_INERTIA_TOL) -> Inertia:
    """Count eigenvalues below, inside, and above the band ``|λ| <= tol*scale``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    eigs = np.asarray(eigs, dtype=float).ravel()
    if scale is None:
        scale = spectral_scale(eigs)
    band = tol * scale
    neg = int(np.sum(eigs < -band))
    zero = int(np.sum(np.abs(eigs) <= band))
    return Inertia(neg, zero, eigs.size - neg - zero, tol)


def batch_inertia(eigs: np.ndarray, tol: float = DEFAULT_INERTIA_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Negatives and zeros per row of an ``(N, n)`` eigenvalue array."""
    eigs = np.atleast_2d(eigs)
    band = tol * np.maximum(1.0, np.max(np.abs(eigs), axis=1))
    neg = np.sum(eigs < -band[:, None], axis=1)
    zero = np.sum(np.abs(eigs) <= band[:, None], axis=1)
    return neg, zero


# ---------------------------------------------------------------------------
# Affine upper envelope by dense simplex
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineFunctional:
    """``l(x) = <a, x> + b``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        if not (np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise ValueError("affine functional must have finite coefficients")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.a + self.b

    def shifted(self, delta: float) -> "AffineFunctional":
        return AffineFunctional(self.a, self.b + delta)

    def to_json(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b}


def simplex_max(c: np.ndarray, A: np.ndarray, rhs: np.ndarray, max_iter: int = 10_000) -> np.ndarray:
    """Maximize ``c.x`` subject to ``A x <= rhs``, ``x >= 0`` with ``rhs >= 0``.

    Dense tableau. The entering column has the most negative reduced cost and
    ties go to the lowest index (Bland); after a run of degenerate pivots the
    rule switches to pure Bland, which cannot cycle.
    """
    A = np.asarray(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if np.any(rhs < 0):
        raise InfeasibleLPError("origin must be feasible")
    m, nv = A.shape
    T = np.zeros((m + 1, nv + m + 1))
    T[:m, :nv] = A
    T[:m, nv:nv + m] = np.eye(m)
    T[:m, -1] = rhs
    T[m, :nv] = -np.asarray(c, dtype=float)
    basis = np.arange(nv, nv + m)
    eps = 1e-12
    degenerate = 0
    for _ in range(max_iter):
        cost = T[m, :-1]
        cand = np.nonzero(cost < -eps)[0]
        if cand.size == 0:
            break
        enter = int(cand[0]) if degenerate > 2 * (nv + 1) else int(cand[np.argmin(cost[cand])])
        col = T[:m, enter]
        rows = np.nonzero(col > eps)[0]
        if rows.size == 0:
            raise UnboundedLPError("objective is unbounded on the feasible region")
        ratios = T[rows, -1] / col[rows]
        best = np.min(ratios)
        ties = rows[ratios <= best + 1e-14 * max(1.0, abs(best))]
        leave = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if best <= 0 else 0
        pivot = T[leave] / T[leave, enter]
        T -= T[:, enter, None] * pivot
        T[leave] = pivot
        basis[leave] = enter
    else:
        raise ArithmeticError("simplex iteration limit reached")
    x = np.zeros(nv + m)
    x[basis] = T[:m, -1]
    return x[:nv]


def fit_affine_upper_envelope(points, values, center) -> AffineFunctional:
    """Affine ``l`` minimizing ``l(center)`` subject to ``l(x_i) >= u_i``.

    Samples with value -inf impose no constraint and are dropped.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    u = np.asarray(values, dtype=float).ravel()
    c0 = np.asarray(center, dtype=float).ravel()
    if X.shape[0] != u.size:
        raise ValueError("points and values disagree in length")
    if np.any(np.isnan(u)) or np.any(u == np.inf):
        raise ValueError("sample values must be finite or -inf")
    keep = np.isfinite(u)
    X, u = X[keep], u[keep]
    k = X.shape[1] if X.ndim == 2 else c0.size
    if u.size == 0:
        raise UnboundedLPError("no finite samples; the envelope is unbounded below")
    if u.size < k + 1:
        raise UnboundedLPError(f"need at least {k + 1} finite samples, got {u.size}")
    # Work relative to the center and tilt by a least-squares slope a0, so the
    # starting vertex l(y) = a0.y + U (U = max(u_i - a0.y_i)) is feasible and
    # usually close to optimal. Unknowns: a = a0 + a+ - a-, offset U - beta.
    Y = X - c0
    design = np.hstack([Y, np.ones((u.size, 1))])
    a0 = np.linalg.lstsq(design, u, rcond=None)[0][:k]
    if not np.all(np.isfinite(a0)):
        a0 = np.zeros(k)
    w = u - Y @ a0
    U = float(np.max(w))
    # constraint a.y_i + U - beta >= u_i  <=>  -(a-a0).y_i + beta <= U - w_i
    A = np.hstack([-Y, Y, np.ones((u.size, 1)), -np.ones((u.size, 1))])
    rhs = np.maximum(U - w, 0.0)
    # minimize l(c0) = U - beta  <=>  maximize beta
    cost = np.zeros(2 * k + 2)
    cost[2 * k] = 1.0
    cost[2 * k + 1] = -1.0
    z = simplex_max(cost, A, rhs)
    a = a0 + z[:k] - z[k:2 * k]
    beta = z[2 * k] - z[2 * k + 1]
    return AffineFunctional(a, U - beta - float(a @ c0))
