"""The recursive simulating function, stored as a flat list of nodes.

A depth-``T`` function lives on ``R^{dim(T)}`` with ``dim(T) = 4 * 2^T - 3``.
Its top node reads coordinates 0..4. The ``+`` subtree is embedded on
coordinates ``3, 5, .., dim - 2`` and the ``-`` subtree on ``4, 6, .., dim - 1``.
Embedding is recursive, so each node owns five global coordinates and the
nested maximum is one flat maximum over the pieces of all nodes plus a
constant floor:

* ``h1 = w0 - a_h (1 + q(x)) w1 - a_h (1 - q(x)) w2``
* ``h2a = (2 + xi2) w1 + w2 - w3``
* ``h2b = (2 + xi3) w2 + w1 - w4``
* ``floor = c * eta``

``a_h = a * ratio^-(h - 1)`` shrinks with the node height ``h`` (leaves have
``h = 1``). Ties go to the lowest piece index, in preorder (node, ``+``
subtree, ``-`` subtree) with the floor last.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .._validation import check_rng, path_seed
from ..convex import StochasticConvexFunction
from ..sq import FiniteDistribution
from .tree import BooleanAnalystTree, Path


def sim_dim(T: int) -> int:
    if T < 1:
        raise ValueError("depth must be at least 1")
    return 4 * 2**T - 3


def plus_coords(D: int) -> np.ndarray:
    return np.arange(3, D, 2)


def minus_coords(D: int) -> np.ndarray:
    return np.arange(4, D, 2)


def node_coords(T: int, path: Path) -> np.ndarray:
    """Global coordinates of the five local coordinates of node ``path``."""
    coords = np.arange(sim_dim(T))
    for s in path:
        coords = coords[3::2] if s > 0 else coords[4::2]
    return coords[:5]


@dataclass(frozen=True)
class SimParams:
    """Step size, accuracy scale and the function's coefficients.

    ``c=None`` puts the floor halfway below its upper limit
    ``3 a_top - 12 eps``, where ``a_top`` is the top node's coefficient.
    """

    eta: float = 1 / 800
    eps: float = 1 / 400
    a: float = 1 / 16
    c: float | None = None
    level_ratio: float = 1.5

    def coefficient(self, height: int) -> float:
        return self.a * self.level_ratio ** (-(height - 1))

    def floor_constant(self, T: int) -> float:
        if self.c is not None:
            return self.c
        return (3 * self.coefficient(T) - 12 * self.eps) / 2

    def validate(self, T: int) -> "SimParams":
        """Reject parameters violating a build constraint, naming the inequality."""
        if not self.eta > 0:
            raise ValueError(f"constraint eta > 0 violated (eta={self.eta})")
        if not self.eps > 0:
            raise ValueError(f"constraint eps > 0 violated (eps={self.eps})")
        if not 0 < self.a <= 1 / 16:
            raise ValueError(f"constraint 0 < a <= 1/16 violated (a={self.a})")
        if not self.level_ratio > 4 / 3:
            raise ValueError(f"constraint level_ratio > 4/3 violated (level_ratio={self.level_ratio})")
        c = self.floor_constant(T)
        limit = 3 * self.coefficient(T) - 12 * self.eps
        if not 0 < c < limit:
            raise ValueError(f"constraint 0 < c < 3*a_top - 12*eps violated (c={c:.6g}, 3*a_top - 12*eps={limit:.6g} at T={T})")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def regime_report(T: int, params: SimParams) -> dict:
    """Which step-size and horizon assumptions of the accuracy analysis hold."""
    eta, eps = params.eta, params.eps
    return {
        "eta < sqrt(eps/48)": bool(eta < np.sqrt(eps / 48)),
        "T < 1/(4 eta)": bool(T < 1 / (4 * eta)),
        "T < 1/(24 eps)": bool(T < 1 / (24 * eps)),
    }


@dataclass(frozen=True)
class SimNode:
    path: Path
    height: int
    coords: np.ndarray  # (5,) global coordinates
    coef: float
    xi2: float
    xi3: float
    query: np.ndarray  # (n,)

    def h1(self, w, X) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(m,)`` and gradients ``(m, D)`` of ``h1`` at points ``X``."""
        c = self.coords
        q = self.query[np.asarray(X)]
        lo, hi = self.coef * (1 + q), self.coef * (1 - q)
        values = w[c[0]] - lo * w[c[1]] - hi * w[c[2]]
        grads = np.zeros((q.size, w.size))
        grads[:, c[0]] = 1.0
        grads[:, c[1]] = -lo
        grads[:, c[2]] = -hi
        return values, grads

    def h2(self, w) -> tuple[float, np.ndarray, int]:
        """Value, gradient and active branch (0 or 1) of ``h2``."""
        c = self.coords
        a = (2 + self.xi2) * w[c[1]] + w[c[2]] - w[c[3]]
        b = (2 + self.xi3) * w[c[2]] + w[c[1]] - w[c[4]]
        g = np.zeros(w.size)
        if a >= b:
            g[c[1]], g[c[2]], g[c[3]] = 2 + self.xi2, 1.0, -1.0
            return float(a), g, 0
        g[c[2]], g[c[1]], g[c[4]] = 2 + self.xi3, 1.0, -1.0
        return float(b), g, 1


def make_node(T: int, path: Path, query, params: SimParams, seed) -> SimNode:
    """Node ``path`` of a depth-``T`` function; its ``xi`` draws depend only on ``(seed, path)``."""
    xi = check_rng(path_seed(seed, path)).uniform(0.0, params.eta**4, size=2)
    height = T - len(path)
    return SimNode(tuple(path), height, node_coords(T, path), params.coefficient(height), float(xi[0]), float(xi[1]), np.asarray(query, dtype=float))


def _preorder(depth: int, path: Path = ()):
    yield path
    if len(path) + 1 < depth:
        yield from _preorder(depth, path + (1,))
        yield from _preorder(depth, path + (-1,))


class SimFunction(StochasticConvexFunction):
    """Depth-``T`` simulating function of a Boolean analyst tree.

    Internally 4-Lipschitz; ``lipschitz_scale`` is the factor that turns it
    into a 1-Lipschitz function.
    """

    lipschitz = 4.0
    lipschitz_scale = 0.25

    def __init__(self, nodes: list[SimNode], T: int, params: SimParams, distribution: FiniteDistribution | None = None, seed=None):
        self.nodes = nodes
        self.T = T
        self.params = params
        self.distribution = distribution
        self.seed = seed
        self.dim = sim_dim(T)
        self.floor = params.floor_constant(T) * params.eta
        self.by_path = {nd.path: nd for nd in nodes}
        self._C = np.array([nd.coords for nd in nodes])
        self._coef = np.array([nd.coef for nd in nodes])
        self._xi = np.array([[nd.xi2, nd.xi3] for nd in nodes])
        self._Q = np.array([nd.query for nd in nodes])

    @classmethod
    def build(cls, tree: BooleanAnalystTree, params: SimParams | None = None, seed=0) -> "SimFunction":
        params = (params or SimParams()).validate(tree.depth)
        nodes = [make_node(tree.depth, p, tree.query(p), params, seed) for p in _preorder(tree.depth)]
        return cls(nodes, tree.depth, params, tree.distribution, seed)

    def node(self, path) -> SimNode:
        return self.by_path[tuple(path)]

    def pieces(self, w, X) -> np.ndarray:
        """Values of every piece, shape ``(3 * nodes + 1, m)``."""
        w = np.asarray(w, dtype=float)
        X = np.asarray(X)
        W = w[self._C]  # (N, 5)
        q = self._Q[:, X]  # (N, m)
        h1 = W[:, [0]] - self._coef[:, None] * ((1 + q) * W[:, [1]] + (1 - q) * W[:, [2]])
        h2a = (2 + self._xi[:, 0]) * W[:, 1] + W[:, 2] - W[:, 3]
        h2b = (2 + self._xi[:, 1]) * W[:, 2] + W[:, 1] - W[:, 4]
        m = X.size
        V = np.stack([h1, np.repeat(h2a[:, None], m, 1), np.repeat(h2b[:, None], m, 1)], axis=1)
        return np.vstack([V.reshape(-1, m), np.full((1, m), self.floor)])

    def active_pieces(self, w, X) -> np.ndarray:
        return np.argmax(self.pieces(w, X), axis=0)

    def first_order(self, w, X):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"point has shape {w.shape}, expected ({self.dim},)")
        X = np.asarray(X)
        V = self.pieces(w, X)
        idx = np.argmax(V, axis=0)
        rows = np.arange(X.size)
        values = V[idx, rows]
        grads = np.zeros((X.size, self.dim))
        node, kind = np.divmod(idx, 3)
        live = idx < 3 * len(self.nodes)
        for k in range(3):
            r = rows[live & (kind == k)]
            if r.size == 0:
                continue
            j = node[r]
            C = self._C[j]
            if k == 0:
                q = self._Q[j, X[r]]
                grads[r, C[:, 0]] = 1.0
                grads[r, C[:, 1]] = -self._coef[j] * (1 + q)
                grads[r, C[:, 2]] = -self._coef[j] * (1 - q)
            elif k == 1:
                grads[r, C[:, 1]] = 2 + self._xi[j, 0]
                grads[r, C[:, 2]] = 1.0
                grads[r, C[:, 3]] = -1.0
            else:
                grads[r, C[:, 2]] = 2 + self._xi[j, 1]
                grads[r, C[:, 1]] = 1.0
                grads[r, C[:, 4]] = -1.0
        return values, grads

    def initial_point(self) -> np.ndarray:
        w = np.zeros(self.dim)
        w[0] = self.params.eta
        return w


def build_sim_function(tree: BooleanAnalystTree, eta: float = 1 / 800, a: float = 1 / 16, c: float | None = None, seed=0, eps: float = 1 / 400, level_ratio: float = 1.5) -> SimFunction:
    return SimFunction.build(tree, SimParams(eta=eta, eps=eps, a=a, c=c, level_ratio=level_ratio), seed)


def eval_sim(f: SimFunction, w, x):
    """``FirstOrderInfo`` of ``f`` at one point, or ``(values, grads)`` for an index array."""
    if np.ndim(x) == 0:
        return f(w, int(x))
    return f.first_order(w, x)


def with_params(params: SimParams, **changes) -> SimParams:
    return replace(params, **changes)
