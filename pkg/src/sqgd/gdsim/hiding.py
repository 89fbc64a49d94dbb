"""Random coordinate hiding with a pinned first coordinate."""

from __future__ import annotations

import numpy as np

from .._validation import check_rng


class HidingEmbedding:
    """Embeds ``R^dim`` into ``R^d`` by an injective coordinate map ``pi``.

    ``pi(0) = 0``; the other local coordinates land on distinct coordinates
    drawn without replacement from ``1..d-1``. ``lift`` is ``Sigma`` and
    ``restrict`` is ``Sigma^T``; coordinates outside the image are dropped
    by ``restrict``.
    """

    def __init__(self, perm, d: int):
        perm = np.asarray(perm, dtype=np.int64)
        if perm.ndim != 1 or perm.size == 0 or perm[0] != 0:
            raise ValueError("the embedding must pin local coordinate 0 to coordinate 0")
        if len(np.unique(perm)) != perm.size or perm.max() >= d or perm.min() < 0:
            raise ValueError("the embedding must be injective into 0..d-1")
        self.perm = perm
        self.d = int(d)

    @property
    def dim(self) -> int:
        return self.perm.size

    @classmethod
    def identity(cls, dim: int, d: int | None = None) -> "HidingEmbedding":
        return cls(np.arange(dim), dim if d is None else d)

    @classmethod
    def random(cls, dim: int, d: int, seed=None) -> "HidingEmbedding":
        if d < dim:
            raise ValueError(f"hiding dimension d={d} is smaller than the function's dimension {dim}")
        rest = check_rng(seed).choice(np.arange(1, d), size=dim - 1, replace=False)
        return cls(np.concatenate([[0], rest]), d)

    @property
    def is_identity(self) -> bool:
        return self.d == self.dim and bool(np.all(self.perm == np.arange(self.dim)))

    def restrict(self, v) -> np.ndarray:
        """``Sigma^T v``; works on the last axis."""
        return np.asarray(v, dtype=float)[..., self.perm]

    def lift(self, u) -> np.ndarray:
        """``Sigma u``; works on the last axis."""
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (self.d,))
        out[..., self.perm] = u
        return out


def apply_hiding(f, embedding: HidingEmbedding) -> "HiddenFunction":
    return HiddenFunction(f, embedding)


class HiddenFunction:
    """``f(Sigma^T w, x)`` on ``R^d`` with gradients ``Sigma grad f``."""

    def __init__(self, f, embedding: HidingEmbedding):
        if embedding.dim != f.dim:
            raise ValueError(f"embedding covers {embedding.dim} coordinates, the function has {f.dim}")
        self.f = f
        self.embedding = embedding
        self.dim = embedding.d
        self.lipschitz = f.lipschitz
        self.distribution = f.distribution

    def first_order(self, w, X):
        values, grads = self.f.first_order(self.embedding.restrict(w), X)
        return values, self.embedding.lift(grads)

    def population_first_order(self, w):
        value, grad = self.f.population_first_order(self.embedding.restrict(w))
        return value, self.embedding.lift(grad)

    def initial_point(self) -> np.ndarray:
        return self.embedding.lift(self.f.initial_point())


def leakage_trial(d: int, v, slice_coords, n_draws: int, dim: int, seed=0) -> np.ndarray:
    """``||P_slice Sigma^T v||^2`` for ``n_draws`` random embeddings."""
    rng = check_rng(seed)
    v = np.asarray(v, dtype=float)
    out = np.empty(n_draws)
    for k in range(n_draws):
        emb = HidingEmbedding.random(dim, d, rng)
        out[k] = np.sum(emb.restrict(v)[list(slice_coords)] ** 2)
    return out
