"""Three-piece warm-up function: two GD steps answer one query and pick the next."""

from __future__ import annotations

import numpy as np

from ..convex import StochasticConvexFunction
from ..sq import FiniteDistribution


class OverviewFunction(StochasticConvexFunction):
    """``max{w0 + eta - (1-q)/3 w1 - (1+q)/3 w2, w1 + q_plus w3, w2 + q_minus w4}`` on ``R^5``.

    Started at 0 with exact gradients, the first step moves mostly along
    ``w1`` when ``q(D) < 0`` and along ``w2`` otherwise. The second gradient
    then exposes ``q_plus`` or ``q_minus`` respectively.
    """

    dim = 5
    lipschitz = 2.0

    def __init__(self, q, q_plus, q_minus, eta: float, distribution: FiniteDistribution):
        self.q = np.asarray(q, dtype=float)
        self.q_plus = np.asarray(q_plus, dtype=float)
        self.q_minus = np.asarray(q_minus, dtype=float)
        self.eta = eta
        self.distribution = distribution

    def first_order(self, w, X):
        w = np.asarray(w, dtype=float)
        X = np.asarray(X)
        q, qp, qm = self.q[X], self.q_plus[X], self.q_minus[X]
        V = np.stack([
            w[0] + self.eta - (1 - q) / 3 * w[1] - (1 + q) / 3 * w[2],
            w[1] + qp * w[3],
            w[2] + qm * w[4],
        ])
        idx = np.argmax(V, axis=0)
        grads = np.zeros((X.size, 5))
        r = idx == 0
        grads[r, 0], grads[r, 1], grads[r, 2] = 1.0, -(1 - q[r]) / 3, -(1 + q[r]) / 3
        r = idx == 1
        grads[r, 1], grads[r, 3] = 1.0, qp[r]
        r = idx == 2
        grads[r, 2], grads[r, 4] = 1.0, qm[r]
        return V[idx, np.arange(X.size)], grads


def overview_trajectory(f: OverviewFunction, steps: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Iterates and exact population gradients of unprojected GD from 0."""
    w = np.zeros(5)
    ws, gs = [], []
    for _ in range(steps):
        g = f.population_first_order(w)[1]
        ws.append(w)
        gs.append(g)
        w = w - f.eta * g
    return np.array(ws), np.array(gs)
