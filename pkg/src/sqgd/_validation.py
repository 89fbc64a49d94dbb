"""Input validation and random-state helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np

PROB_ATOL = 1e-12


def check_rng(seed=None) -> np.random.Generator:
    """Turn ``seed`` into a counter-based ``Generator``.

    Integers, lists of integers and ``SeedSequence`` objects are expanded through Philox so that
    every named seed yields an independent, splittable stream. Generators are
    passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None or isinstance(seed, numbers.Integral) or (isinstance(seed, (list, tuple)) and all(isinstance(s, numbers.Integral) for s in seed)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    raise TypeError(f"cannot build a random generator from {seed!r}")


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Split ``seed`` into ``n`` independent child seed sequences."""
    if isinstance(seed, np.random.SeedSequence):
        return seed.spawn(n)
    return np.random.SeedSequence(seed).spawn(n)


def path_seed(seed: int, path) -> np.random.SeedSequence:
    """Seed sequence keyed by ``seed`` and a tuple of +-1 labels."""
    key = [0 if s > 0 else 1 for s in path]
    return np.random.SeedSequence([int(seed), len(key), *key])


def check_query(q, n: int | None = None, *, name: str = "query", atol: float = 0.0) -> np.ndarray:
    """Validate a query table (or a batch of them) with entries in [-1, 1]."""
    q = np.asarray(q, dtype=float)
    if q.ndim not in (1, 2):
        raise ValueError(f"{name} must be a vector or a (k, n) batch, got shape {q.shape}")
    if n is not None and q.shape[-1] != n:
        raise ValueError(f"{name} has {q.shape[-1]} entries but the domain has {n} points")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(np.abs(q) > 1.0 + atol):
        worst = float(np.max(np.abs(q)))
        raise ValueError(f"{name} leaves [-1, 1] (max |q| = {worst:.6g})")
    return q


def check_probability_vector(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("a probability vector must be a non-empty 1-D array")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > PROB_ATOL * max(1, p.size):
        raise ValueError(f"probabilities sum to {p.sum():.15g}, not 1")
    return p


def check_positive(value, name: str, *, strict: bool = True):
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        sign = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {sign}, got {value!r}")
    return value


def check_unit_interval(value, name: str, *, open_left: bool = False, open_right: bool = False):
    lo_ok = value > 0 if open_left else value >= 0
    hi_ok = value < 1 if open_right else value <= 1
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in the unit interval, got {value!r}")
    return value


def sign(a) -> np.ndarray:
    """Sign with the convention sgn(0) = +1, returned as +-1 integers."""
    return np.where(np.asarray(a, dtype=float) >= 0, 1, -1)
