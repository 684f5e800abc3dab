from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcx.spectra import (
    AffineFunctional,
    ConvergenceError,
    PairingError,
    UnboundedLPError,
    batch_inertia,
    eig_hermitian,
    eig_symmetric,
    fit_affine_upper_envelope,
    inertia,
    jacobi_eigh,
    simplex_max,
)


def _random_symmetric(rng, n):
    a = rng.uniform(-1, 1, (n, n))
    return (a + a.T) / 2


def _random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


# -- eigenvalues ------------------------------------------------------------------


def test_symmetric_examples():
    assert np.allclose(eig_symmetric(np.eye(3)), [1, 1, 1])
    assert np.allclose(eig_symmetric([[0, 1], [1, 0]]), [-1, 1])
    assert np.allclose(eig_symmetric(np.diag([-2.0, 0.0])), [-2, 0])


def test_hermitian_examples():
    assert np.allclose(eig_hermitian(np.eye(2)), [1, 1])
    assert np.allclose(eig_hermitian(np.array([[0, -1j], [1j, 0]])), [-1, 1])
    assert np.allclose(eig_hermitian(np.diag([-0.5, 0.0])), [-0.5, 0])


def test_jacobi_matches_reference_solver():
    # numpy's LAPACK route is the independent oracle here
    rng = np.random.default_rng(7)
    for n in range(1, 11):
        for _ in range(5):
            m = _random_symmetric(rng, n) * 10 ** rng.uniform(-3, 3)
            ref = np.linalg.eigvalsh(m)
            assert np.max(np.abs(eig_symmetric(m) - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_jacobi_eigenvectors_diagonalize():
    rng = np.random.default_rng(3)
    m = _random_symmetric(rng, 6)
    w, v = jacobi_eigh(m, vectors=True)
    assert np.allclose(v.T @ m @ v, np.diag(w), atol=1e-10)
    assert np.allclose(v.T @ v, np.eye(6), atol=1e-12)


def test_jacobi_works_on_stacks():
    rng = np.random.default_rng(4)
    ms = np.stack([_random_symmetric(rng, 4) for _ in range(7)])
    w = jacobi_eigh(ms)
    assert w.shape == (7, 4)
    assert np.allclose(w, np.linalg.eigvalsh(ms), atol=1e-10)


def test_jacobi_rejects_asymmetric_and_non_finite():
    with pytest.raises(ValueError):
        eig_symmetric([[0, 1], [0.5, 0]])
    with pytest.raises(ValueError):
        eig_symmetric([[np.nan, 0], [0, 1]])


def test_jacobi_reports_non_convergence_with_residual():
    rng = np.random.default_rng(5)
    with pytest.raises(ConvergenceError) as info:
        jacobi_eigh(_random_symmetric(rng, 8), max_sweeps=1)
    assert info.value.residual > 0


def test_hermitian_matches_reference_solver():
    rng = np.random.default_rng(11)
    for n in range(1, 6):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        h = (a + a.conj().T) / 2
        assert np.allclose(eig_hermitian(h), np.linalg.eigvalsh(h), atol=1e-10)


def test_hermitian_rejects_non_hermitian():
    with pytest.raises(ValueError):
        eig_hermitian(np.array([[0, 1j], [1j, 0]]))


def test_pairing_error_is_a_distinct_failure():
    assert issubclass(PairingError, ArithmeticError)
    assert not issubclass(PairingError, ConvergenceError)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_trace_and_similarity_invariance(n, seed):
    rng = np.random.default_rng(seed)
    m = _random_symmetric(rng, n)
    w = eig_symmetric(m)
    assert abs(np.sum(w) - np.trace(m)) <= 1e-9 * n * max(1.0, np.linalg.norm(m))
    q = _random_orthogonal(rng, n)
    m2 = q @ m @ q.T
    m2 = (m2 + m2.T) / 2
    assert np.max(np.abs(eig_symmetric(m2) - w)) <= 1e-9


# -- inertia ------------------------------------------------------------------------


def test_inertia_examples():
    i = inertia([-2, 0], tol=1e-7)
    assert (i.negatives, i.zeros, i.positives) == (1, 1, 0)
    i = inertia([-1e-12, 1e-12], tol=1e-7)
    assert (i.negatives, i.zeros, i.positives) == (0, 2, 0)
    i = inertia([-2, -2])
    assert (i.negatives, i.zeros, i.positives) == (2, 0, 0)


def test_strict_index_counts_zeros():
    assert inertia([-1, 0, 3]).strict_index == 2


def test_batch_inertia_matches_single():
    rng = np.random.default_rng(2)
    eigs = rng.normal(size=(50, 4))
    eigs[::7, 1] = 0.0
    neg, zero = batch_inertia(eigs)
    for row, a, b in zip(eigs, neg, zero):
        i = inertia(row)
        assert (i.negatives, i.zeros) == (a, b)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(1e-3, 1e3))
@settings(max_examples=200, deadline=None)
def test_inertia_invariant_under_positive_scaling(eigs, c):
    eigs = np.asarray(eigs)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    a = inertia(eigs, scale=scale)
    b = inertia(c * eigs, scale=c * scale)
    assert a == b


# -- linear programming -----------------------------------------------------------------


def test_simplex_small_problem():
    # max x + y s.t. x + 2y <= 4, 3x + y <= 6  -> (1.6, 1.2)
    z = simplex_max(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 1.0]]), np.array([4.0, 6.0]))
    assert np.allclose(z, [1.6, 1.2])


def test_simplex_detects_unbounded():
    with pytest.raises(UnboundedLPError):
        simplex_max(np.array([1.0, 0.0]), np.array([[-1.0, 1.0]]), np.array([1.0]))


def test_envelope_examples():
    l = fit_affine_upper_envelope([[-1.0], [1.0]], [-1.0, -1.0], [0.0])
    assert l([0.0]) == pytest.approx(-1.0) and l.a == pytest.approx([0.0])
    l = fit_affine_upper_envelope([[-1.0], [1.0], [0.5]], [0.0, 0.0, 0.0], [0.0])
    assert l([0.3]) == pytest.approx(0.0)


def test_envelope_reproduces_affine_data():
    a = np.array([0.7, -1.3])
    th = np.linspace(0, 2 * np.pi, 17)[:-1]
    pts = np.stack([np.cos(th), np.sin(th)], axis=1)
    l = fit_affine_upper_envelope(pts, pts @ a, [0.0, 0.0])
    assert np.max(np.abs(l(pts) - pts @ a)) <= 1e-8
    assert np.allclose(l.a, a, atol=1e-8)


def test_envelope_ignores_minus_infinity_samples():
    pts = [[-1.0], [1.0], [0.5]]
    l = fit_affine_upper_envelope(pts, [0.0, 0.0, -np.inf], [0.0])
    assert l([0.0]) == pytest.approx(0.0)


def test_envelope_rejects_unbounded_geometry():
    with pytest.raises(UnboundedLPError):
        fit_affine_upper_envelope([[1.0], [2.0]], [0.0, 1.0], [0.0])
    with pytest.raises(UnboundedLPError):
        fit_affine_upper_envelope([[1.0]], [0.0], [0.0])


def _brute_force_envelope(pts, vals, center):
    """Minimum of l(center) over vertices of the feasible polyhedron."""
    k = pts.shape[1]
    design = np.hstack([pts, np.ones((len(pts), 1))])
    best = np.inf
    for rows in itertools.combinations(range(len(pts)), k + 1):
        M = design[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        coef = np.linalg.solve(M, vals[list(rows)])
        if np.all(design @ coef >= vals - 1e-10):
            best = min(best, float(coef[:k] @ center + coef[k]))
    return best


@given(st.integers(1, 2), st.integers(3, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_envelope_feasible_and_optimal_against_vertex_enumeration(k, m, seed):
    rng = np.random.default_rng(seed)
    if k == 1:
        pts = np.concatenate([[[-1.0], [1.0]], rng.uniform(-1, 1, (m - 2, 1))])
    else:
        th = np.sort(rng.uniform(0, 2 * np.pi, m))
        th[: 3] = [0.3, 0.3 + 2.1, 0.3 + 4.2]  # keep the origin strictly inside the hull
        pts = np.stack([np.cos(th), np.sin(th)], axis=1)
    vals = rng.uniform(-2, 2, m)
    center = np.zeros(k)
    l = fit_affine_upper_envelope(pts, vals, center)
    assert np.min(l(pts) - vals) >= -1e-9
    assert abs(float(l(center)) - _brute_force_envelope(pts, vals, center)) <= 1e-9


def test_affine_functional_rejects_non_finite():
    with pytest.raises(ValueError):
        AffineFunctional(np.array([np.inf]), 0.0)
