"""Sampled convexity, Lipschitz and gradient checks for convex functions."""

from __future__ import annotations

import numpy as np

from ._validation import check_rng


def random_ball_points(n: int, dim: int, seed=None, radius: float = 1.0) -> np.ndarray:
    """``n`` points uniform in the ``dim``-ball of the given radius."""
    rng = check_rng(seed)
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return radius * u * rng.uniform(size=(n, 1)) ** (1.0 / dim)


def convexity_gaps(f, n_triples: int, points, seed=None, radius: float = 1.0) -> np.ndarray:
    """``f(l w + (1-l) w', x) - l f(w, x) - (1-l) f(w', x)`` over random triples.

    Positive entries are convexity violations.
    """
    rng = check_rng(seed)
    W1 = random_ball_points(n_triples, f.dim, rng, radius)
    W2 = random_ball_points(n_triples, f.dim, rng, radius)
    lam = rng.uniform(size=n_triples)
    X = rng.choice(np.asarray(points), size=n_triples)
    gaps = np.empty(n_triples)
    for j in range(n_triples):
        x = X[j : j + 1]
        mid = lam[j] * W1[j] + (1 - lam[j]) * W2[j]
        fm = f.first_order(mid, x)[0][0]
        f1 = f.first_order(W1[j], x)[0][0]
        f2 = f.first_order(W2[j], x)[0][0]
        gaps[j] = fm - lam[j] * f1 - (1 - lam[j]) * f2
    return gaps


def gradient_norms(f, n: int, points, seed=None, radius: float = 1.0) -> np.ndarray:
    rng = check_rng(seed)
    W = random_ball_points(n, f.dim, rng, radius)
    X = rng.choice(np.asarray(points), size=n)
    return np.array([np.linalg.norm(f.first_order(W[j], X[j : j + 1])[1][0]) for j in range(n)])


def min_values(f, n: int, points, seed=None, radius: float = 1.0) -> float:
    rng = check_rng(seed)
    W = random_ball_points(n, f.dim, rng, radius)
    pts = np.asarray(points)
    return float(min(f.first_order(W[j], pts)[0].min() for j in range(n)))


def finite_difference_errors(f, n: int, points, seed=None, h: float = 1e-7, kink_tol: float = 1e-6, radius: float = 1.0) -> np.ndarray:
    """Relative error between analytic gradients and central differences.

    Points whose active piece changes within ``kink_tol`` are resampled; ``f``
    must expose ``pieces(w, X)`` for that, otherwise no point is skipped.
    """
    rng = check_rng(seed)
    pts = np.asarray(points)
    errs = []
    while len(errs) < n:
        w = random_ball_points(1, f.dim, rng, radius)[0]
        x = pts[rng.integers(len(pts)) : ][:1]
        if hasattr(f, "pieces"):
            V = np.sort(f.pieces(w, x)[:, 0])
            if V[-1] - V[-2] < kink_tol:
                continue
        g = f.first_order(w, x)[1][0]
        fd = np.empty(f.dim)
        for i in range(f.dim):
            e = np.zeros(f.dim)
            e[i] = h
            fd[i] = (f.first_order(w + e, x)[0][0] - f.first_order(w - e, x)[0][0]) / (2 * h)
        errs.append(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))
    return np.array(errs)
