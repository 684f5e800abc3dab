"""Deterministic and seeded point sets on unit spheres and balls."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import ndtri

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97)


def radical_inverse(i: np.ndarray, base: int) -> np.ndarray:
    i = np.asarray(i, dtype=np.int64).copy()
    out = np.zeros(i.shape)
    f = 1.0 / base
    while np.any(i > 0):
        out += f * (i % base)
        i //= base
        f /= base
    return out


def halton(m: int, d: int) -> np.ndarray:
    """First ``m`` Halton points in (0,1)^d, skipping the origin."""
    if d > len(_PRIMES):
        raise ValueError("dimension too large for the Halton table")
    idx = np.arange(1, m + 1)
    return np.stack([radical_inverse(idx, _PRIMES[j]) for j in range(d)], axis=1)


def sphere_points(m: int, d: int) -> np.ndarray:
    """Deterministic near-uniform points on S^{d-1}.

    d=1: {+1,-1}; d=2: equally spaced angles; d=3: Fibonacci spiral;
    d>=4: Halton points pushed through the normal quantile and normalized.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if d == 3:
        i = np.arange(m) + 0.5
        z = 1 - 2 * i / m
        rho = np.sqrt(np.maximum(0.0, 1 - z * z))
        phi = np.pi * (3 - np.sqrt(5)) * i
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    g = ndtri(halton(m, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def axis_and_sign_points(d: int) -> np.ndarray:
    """The 2d axis crossings and 2^d normalized sign patterns on S^{d-1}, deduplicated."""
    pts = []
    for i in range(d):
        for s in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = s
            pts.append(e)
    if d > 1:
        for signs in itertools.product((1.0, -1.0), repeat=d):
            pts.append(np.array(signs) / np.sqrt(d))
    return np.array(pts)


def uniform_sphere(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    g = rng.standard_normal((m, d))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(nrm == 0, 1.0, nrm)


def uniform_ball(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    return uniform_sphere(rng, m, d) * rng.random((m, 1)) ** (1.0 / d)
