"""Projected gradient descent against first-order oracles.

Functions are convex in ``w`` and evaluated in batches over domain points.
Oracles never see the function itself; each round they receive a
:class:`GradientAccess` that returns ``(f(w_t, x), grad f(w_t, x))`` for the
points they ask about.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_rng, spawn_seeds
from .sq import FiniteDistribution, SQOracle


@dataclass(frozen=True)
class FirstOrderInfo:
    value: float
    gradient: np.ndarray


def project_unit_ball(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    return w / norm if norm > 1.0 else w.copy()


def gd_step(w, g, eta: float) -> np.ndarray:
    check_positive(eta, "eta")
    return project_unit_ball(np.asarray(w, dtype=float) - eta * np.asarray(g, dtype=float))


class StochasticConvexFunction:
    """``f(w, x)`` convex in ``w`` for every domain point ``x``.

    Subclasses implement :meth:`first_order` on a batch of points. Points are
    domain indices unless the subclass says otherwise.
    """

    dim: int
    lipschitz: float
    distribution: FiniteDistribution | None = None

    def first_order(self, w, X) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(m,)`` and gradients ``(m, dim)`` at ``w`` for points ``X``."""
        raise NotImplementedError

    def __call__(self, w, x) -> FirstOrderInfo:
        values, grads = self.first_order(w, np.asarray([x]))
        return FirstOrderInfo(float(values[0]), grads[0])

    def domain_points(self) -> np.ndarray:
        if self.distribution is None:
            raise ValueError(f"{type(self).__name__} has no finite distribution attached")
        return np.arange(self.distribution.n)

    def sample_points(self, m: int, seed=None) -> np.ndarray:
        if self.distribution is None:
            raise ValueError(f"{type(self).__name__} has no finite distribution attached")
        return self.distribution.sample(m, seed).indices

    def population_first_order(self, w) -> tuple[float, np.ndarray]:
        """Exact ``(F(w), grad F(w))`` under the attached finite distribution."""
        values, grads = self.first_order(w, self.domain_points())
        p = self.distribution.p
        return float(p @ values), p @ grads

    def empirical_first_order(self, w, X) -> tuple[float, np.ndarray]:
        values, grads = self.first_order(w, X)
        return float(values.mean()), grads.mean(axis=0)


class GradientAccess:
    """Per-round first-order table ``x -> (f(w_t, x), grad f(w_t, x))``.

    Wraps any ``evaluate(X) -> (values, grads)`` callable together with the
    point ``w_t`` it refers to.
    """

    def __init__(self, w, evaluate):
        self.w = np.asarray(w, dtype=float)
        self._evaluate = evaluate

    @classmethod
    def of(cls, f: StochasticConvexFunction, w) -> "GradientAccess":
        w = np.asarray(w, dtype=float)
        return cls(w, lambda X: f.first_order(w, X))

    def __call__(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self._evaluate(np.asarray(X))


# --------------------------------------------------------------------------
# first-order oracles


class FOOracle:
    """Gradient estimator that sees only ``w_t`` and the access table."""

    def reset(self, points, seed=None) -> None:
        self.points = np.asarray(points)
        self.rng = check_rng(seed)

    def estimate(self, w, access: GradientAccess, t: int) -> np.ndarray:
        raise NotImplementedError


class EmpiricalMeanFOOracle(FOOracle):
    """Mean sampled gradient; turns projected GD into full-batch GD."""

    def estimate(self, w, access, t):
        _, grads = access(self.points)
        return grads.mean(axis=0)


class TruthfulFOOracle(FOOracle):
    """Exact population gradient, read from the table on the whole domain.

    Not first-order-access: it evaluates the table outside the sample.
    """

    def __init__(self, distribution: FiniteDistribution):
        self.distribution = distribution

    def estimate(self, w, access, t):
        _, grads = access(np.arange(self.distribution.n))
        return self.distribution.p @ grads


class NoisyFOOracle(FOOracle):
    """Wraps another oracle and perturbs its output by a vector of norm ``eps``.

    ``mode``:
      * ``"sphere"``  uniform direction, norm exactly ``eps``;
      * ``"ball"``    uniform direction, norm ``eps * U``;
      * ``"against"`` opposes the base estimate, norm ``eps`` (slows descent);
      * ``"fixed"``   the constant vector ``eps * direction``.
    """

    def __init__(self, base: FOOracle, eps: float, mode: str = "sphere", direction=None):
        if mode not in {"sphere", "ball", "against", "fixed"}:
            raise ValueError(f"unknown noise mode {mode!r}")
        if mode == "fixed" and direction is None:
            raise ValueError("mode='fixed' needs a direction")
        self.base = base
        self.eps = check_positive(eps, "eps", strict=False)
        self.mode = mode
        self.direction = None if direction is None else np.asarray(direction, dtype=float)

    def reset(self, points, seed=None):
        base_seed, own_seed = spawn_seeds(seed, 2) if not isinstance(seed, np.random.Generator) else (seed, seed)
        super().reset(points, own_seed)
        self.base.reset(points, base_seed)

    def estimate(self, w, access, t):
        g = np.asarray(self.base.estimate(w, access, t), dtype=float)
        if self.eps == 0:
            return g
        if self.mode == "fixed":
            u = self.direction / np.linalg.norm(self.direction)
            return g + self.eps * u
        if self.mode == "against":
            norm = np.linalg.norm(g)
            return g if norm == 0 else g - self.eps * g / norm
        u = self.rng.normal(size=g.shape)
        u /= np.linalg.norm(u)
        scale = self.eps * (self.rng.uniform() if self.mode == "ball" else 1.0)
        return g + scale * u


# --------------------------------------------------------------------------
# projected gradient descent


@dataclass
class GDRun:
    trajectory: np.ndarray  # (T, d): w_1..w_T
    final: np.ndarray  # w_{T+1}
    estimates: np.ndarray  # (T, d): O_F(w_t)
    population_gradients: np.ndarray  # (T, d)
    empirical_gradients: np.ndarray  # (T, d)
    points: np.ndarray
    eta: float
    projected: np.ndarray  # (T,) bool: did Pi change w_t - eta g_t
    extra: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.trajectory)

    @property
    def w_S(self) -> np.ndarray:
        return self.trajectory.mean(axis=0)

    @property
    def estimate_errors(self) -> np.ndarray:
        return np.linalg.norm(self.estimates - self.population_gradients, axis=1)

    @property
    def posthoc_gaps(self) -> np.ndarray:
        return np.linalg.norm(self.population_gradients - self.empirical_gradients, axis=1)

    def to_json(self) -> str:
        return json.dumps(
            {
                "eta": self.eta,
                "trajectory": self.trajectory.tolist(),
                "estimates": self.estimates.tolist(),
                "population_gradients": self.population_gradients.tolist(),
                "empirical_gradients": self.empirical_gradients.tolist(),
                "projected": self.projected.astype(int).tolist(),
                **self.extra,
            }
        )

    def to_csv(self) -> str:
        lines = ["t,norm_w,estimate_error,posthoc_gap"]
        for t, (w, e, g) in enumerate(zip(self.trajectory, self.estimate_errors, self.posthoc_gaps), start=1):
            lines.append(f"{t},{np.linalg.norm(w):.12g},{e:.12g},{g:.12g}")
        return "\n".join(lines) + "\n"


def run_gd(f: StochasticConvexFunction, oracle: FOOracle, m: int, eta: float, T: int, seed=0, w1=None, points=None) -> GDRun:
    """Projected GD ``w_{t+1} = Pi(w_t - eta O_F(w_t))`` from ``w_1`` (default 0).

    The exact population gradient and the sample-mean gradient are recorded at
    every iterate so accuracy and post-hoc generalization can be scored later.
    """
    check_positive(eta, "eta")
    if T < 1:
        raise ValueError("T must be at least 1")
    sample_seed, oracle_seed = spawn_seeds(seed, 2)
    if points is None:
        points = f.sample_points(m, check_rng(sample_seed))
    oracle.reset(points, check_rng(oracle_seed))

    w = np.zeros(f.dim) if w1 is None else np.asarray(w1, dtype=float).copy()
    if w.shape != (f.dim,):
        raise ValueError(f"initial point has shape {w.shape}, expected ({f.dim},)")
    traj, est, pop, emp, proj = [], [], [], [], []
    for t in range(T):
        g = np.asarray(oracle.estimate(w.copy(), GradientAccess.of(f, w), t), dtype=float)
        if g.shape != (f.dim,) or not np.all(np.isfinite(g)):
            raise FloatingPointError(f"round {t + 1}: oracle returned a non-finite or misshapen gradient")
        traj.append(w)
        est.append(g)
        pop.append(f.population_first_order(w)[1])
        emp.append(f.empirical_first_order(w, points)[1])
        step = w - eta * g
        w = project_unit_ball(step)
        proj.append(not np.array_equal(w, step))
    return GDRun(
        trajectory=np.array(traj),
        final=w,
        estimates=np.array(est),
        population_gradients=np.array(pop),
        empirical_gradients=np.array(emp),
        points=np.asarray(points),
        eta=eta,
        projected=np.array(proj),
    )


class ProjectedGD(BaseEstimator):
    """Estimator wrapper around :func:`run_gd`.

    ``fit(f, oracle)`` draws ``sample_size`` points from ``f``'s distribution,
    runs ``n_iter`` projected steps and stores the averaged iterate in
    ``coef_``.
    """

    def __init__(self, eta=0.1, n_iter=100, sample_size=10, random_state=0):
        self.eta = eta
        self.n_iter = n_iter
        self.sample_size = sample_size
        self.random_state = random_state

    def fit(self, f, oracle, w1=None):
        self.run_ = run_gd(f, oracle, self.sample_size, self.eta, self.n_iter, seed=self.random_state, w1=w1)
        self.coef_ = self.run_.w_S
        self.trajectory_ = self.run_.trajectory
        self.n_features_in_ = f.dim
        return self

    def suboptimality(self, f, f_star: float) -> float:
        check_is_fitted(self, "coef_")
        return f.population_first_order(self.coef_)[0] - f_star


def eval_fo_accuracy(run: GDRun, eps: float, gamma: float = 0.0) -> tuple[bool, float]:
    fail_fraction = float(np.mean(run.estimate_errors > eps))
    return fail_fraction <= gamma + 1e-12, fail_fraction


def eval_fo_posthoc(run: GDRun, eps: float) -> bool:
    return bool(np.all(run.posthoc_gaps <= eps))


# --------------------------------------------------------------------------
# test functions


class QuadraticTestbed(StochasticConvexFunction):
    """``f(w, x) = 1/2 ||w - z_x||^2`` with centers inside the half ball.

    The population minimizer is the mean center ``z_bar`` and
    ``F* = 1/2 sum_x p(x) ||z_x - z_bar||^2``.
    """

    def __init__(self, centers, distribution: FiniteDistribution):
        self.centers = np.asarray(centers, dtype=float)
        if np.linalg.norm(self.centers, axis=1).max() > 0.5 + 1e-12:
            raise ValueError("testbed centers must lie in the ball of radius 1/2")
        self.distribution = distribution
        self.dim = self.centers.shape[1]
        self.lipschitz = 1.5

    @classmethod
    def default(cls, dim: int = 5, n: int = 8, seed: int = 2024) -> "QuadraticTestbed":
        rng = check_rng(seed)
        z = rng.normal(size=(n, dim))
        z *= (0.5 * rng.uniform(0.2, 1.0, size=n) / np.linalg.norm(z, axis=1))[:, None]
        return cls(z, FiniteDistribution(rng.dirichlet(np.ones(n))))

    @property
    def minimizer(self) -> np.ndarray:
        return self.distribution.p @ self.centers

    @property
    def optimal_value(self) -> float:
        diff = self.centers - self.minimizer
        return 0.5 * float(self.distribution.p @ np.sum(diff**2, axis=1))

    def first_order(self, w, X):
        diff = np.asarray(w, dtype=float)[None, :] - self.centers[np.asarray(X)]
        return 0.5 * np.sum(diff**2, axis=1), diff


class QuadraticQueryFunction(StochasticConvexFunction):
    """``f(w, x) = sum_j (q_j(x) + 1) / 4 * w(c_j)^2``.

    Coordinate ``c_j`` is reserved for query ``q_j``; coordinates without a
    query contribute nothing. Convex and 1-Lipschitz on the unit ball because
    every weight ``(q + 1) / 2`` lies in [0, 1].
    """

    lipschitz = 1.0

    def __init__(self, coords, queries, dim: int, distribution: FiniteDistribution | None = None):
        self.coords = np.asarray(coords, dtype=np.int64)
        self.queries = np.asarray(queries, dtype=float).reshape(len(self.coords), -1)
        if len(np.unique(self.coords)) != len(self.coords):
            raise ValueError("each coordinate can carry only one query")
        if self.coords.size and (self.coords.min() < 0 or self.coords.max() >= dim):
            raise ValueError(f"query coordinates exceed the dimension {dim}")
        self.dim = int(dim)
        self.distribution = distribution

    def with_queries(self, coords, queries) -> "QuadraticQueryFunction":
        queries = np.asarray(queries, dtype=float).reshape(len(coords), -1)
        if self.coords.size:
            queries = np.vstack([self.queries, queries])
            coords = np.concatenate([self.coords, coords])
        return QuadraticQueryFunction(coords, queries, self.dim, self.distribution)

    def first_order(self, w, X):
        w = np.asarray(w, dtype=float)
        X = np.asarray(X)
        weights = (self.queries[:, X].T + 1.0) / 2.0  # (m, r)
        wc = w[self.coords]
        values = 0.5 * weights @ (wc**2)
        grads = np.zeros((len(X), self.dim))
        grads[:, self.coords] = weights * wc
        return values, grads


def quadratic_encode(queries, dim: int | None = None, distribution: FiniteDistribution | None = None) -> QuadraticQueryFunction:
    """Put the ``k`` queries on coordinates ``0..k-1`` of ``R^dim``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    k = queries.shape[0]
    return QuadraticQueryFunction(np.arange(k), queries, k if dim is None else dim, distribution)


class SQFromFOReduction(SQOracle):
    """Batch statistical-query oracle built on a first-order oracle.

    Round ``t``'s ``k`` queries get fresh coordinates ``t*k .. t*k+k-1`` of
    the quadratic encoding. The first-order oracle is queried at
    ``w_t = k^{-1/2} sum_i e_{c_i}`` and coordinate ``c_i`` of its answer
    ``g_t`` decodes to ``2 sqrt(k) g_t(c_i) - 1``.
    """

    def __init__(self, fo_oracle: FOOracle, k: int, T: int, dim: int | None = None):
        self.fo_oracle = fo_oracle
        self.k = int(k)
        self.T = int(T)
        self.dim = self.k * self.T if dim is None else int(dim)
        if self.k * self.T > self.dim:
            raise ValueError(f"k*T = {self.k * self.T} query coordinates do not fit in dimension {self.dim}")

    def reset(self, sample, seed=None):
        super().reset(sample, seed)
        self.fo_oracle.reset(sample.indices, self.rng)
        self.function = None
        self.points_ = []
        self.gradients_ = []

    def answer(self, queries, t):
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[0] != self.k:
            raise ValueError(f"expected a batch of {self.k} queries, got {queries.shape[0]}")
        if t >= self.T:
            raise ValueError(f"round {t + 1} exceeds the reduction's horizon {self.T}")
        coords = np.arange(t * self.k, (t + 1) * self.k)
        if self.function is None:
            self.function = QuadraticQueryFunction(coords, queries, self.dim)
        else:
            self.function = self.function.with_queries(coords, queries)
        w = np.zeros(self.dim)
        w[coords] = 1.0 / np.sqrt(self.k)
        g = np.asarray(self.fo_oracle.estimate(w, GradientAccess.of(self.function, w), t), dtype=float)
        self.points_.append(w)
        self.gradients_.append(g)
        return 2.0 * np.sqrt(self.k) * g[coords] - 1.0


def sq_from_fo_reduction(fo_oracle: FOOracle, k: int, T: int, dim: int | None = None) -> SQFromFOReduction:
    return SQFromFOReduction(fo_oracle, k, T, dim)


# --------------------------------------------------------------------------
# rates under accurate gradients


def gd_rate_experiment(eps: float, eta: float, T: int, noise: str = "sphere", seed=0, testbed: QuadraticTestbed | None = None, m: int = 1) -> float:
    """Suboptimality ``F(w_S) - F*`` of projected GD fed ``grad F`` plus noise of norm ``eps``."""
    testbed = QuadraticTestbed.default() if testbed is None else testbed
    oracle = NoisyFOOracle(TruthfulFOOracle(testbed.distribution), eps, mode=noise)
    run = run_gd(testbed, oracle, m, eta, T, seed=seed)
    return testbed.population_first_order(run.w_S)[0] - testbed.optimal_value


def gd_rate_sweep(eps: float, eta: float, T: int, noise: str = "sphere", n_seeds: int = 100, seed=0, testbed: QuadraticTestbed | None = None) -> np.ndarray:
    """:func:`gd_rate_experiment` for ``n_seeds`` noise streams at once.

    Uses the closed-form testbed gradient ``w - z_bar`` and advances all
    trajectories together; returns one suboptimality per stream.
    """
    testbed = QuadraticTestbed.default() if testbed is None else testbed
    if noise not in {"sphere", "ball", "against"}:
        raise ValueError(f"unknown noise mode {noise!r}")
    rng = check_rng(seed)
    z = testbed.minimizer
    W = np.zeros((n_seeds, testbed.dim))
    total = np.zeros_like(W)
    for _ in range(int(T)):
        total += W
        G = W - z
        if eps > 0:
            if noise == "against":
                norm = np.linalg.norm(G, axis=1, keepdims=True)
                U = -np.divide(G, norm, out=np.zeros_like(G), where=norm > 0)
            else:
                U = rng.normal(size=G.shape)
                U /= np.linalg.norm(U, axis=1, keepdims=True)
                if noise == "ball":
                    U *= rng.uniform(size=(n_seeds, 1))
            G = G + eps * U
        W = W - eta * G
        norms = np.linalg.norm(W, axis=1, keepdims=True)
        W = np.where(norms > 1.0, W / np.maximum(norms, 1.0), W)
    w_S = total / T
    # F(w) - F* = 1/2 ||w - z_bar||^2 for this testbed
    return 0.5 * np.sum((w_S - z) ** 2, axis=1)


def rate_bound(eta: float, T: int, eps: float, C: float = 10.0) -> float:
    return C * (eta + 1.0 / (eta * T) + eps)


# --------------------------------------------------------------------------
# sample-bias construction on the hypercube


class BiasFunction(StochasticConvexFunction):
    """``f(w, x) = s * sqrt(sum_i x(i) max(0, w(i))^2) + gamma * v_x . w`` for bit vectors ``x``.

    ``v_x(i) = -1/m`` where ``x(i) = 0`` and ``+1`` where ``x(i) = 1``. The
    norm term's subgradient at its kink is taken to be 0. With
    ``gamma = 1/(2 sqrt(d))`` and ``s = 1/2`` the function is 1-Lipschitz.
    Points are rows of a boolean matrix rather than domain indices.
    """

    def __init__(self, d: int, m: int, gamma: float | None = None, norm_weight: float = 0.5):
        self.dim = int(d)
        self.m = int(m)
        self.gamma = 1.0 / (2.0 * np.sqrt(d)) if gamma is None else float(gamma)
        self.norm_weight = norm_weight
        self.lipschitz = norm_weight + self.gamma * np.sqrt(d)

    def signs(self, X) -> np.ndarray:
        return np.where(np.asarray(X, dtype=bool), 1.0, -1.0 / self.m)

    def first_order(self, w, X):
        w = np.asarray(w, dtype=float)
        X = np.asarray(X, dtype=bool)
        z = X * np.maximum(w, 0.0)
        norm = np.sqrt(np.sum(z**2, axis=1))
        V = self.signs(X)
        values = self.norm_weight * norm + self.gamma * V @ w
        grads = self.gamma * V
        nz = norm > 0
        grads[nz] += self.norm_weight * z[nz] / norm[nz, None]
        return values, grads

    def sample_points(self, m: int, seed=None) -> np.ndarray:
        return check_rng(seed).random((m, self.dim)) < 0.5


def bias_demo(m: int = 12, d: int = 2**16, gamma: float | None = None, population_mc_n: int = 100_000, seed=0, norm_weight: float = 0.5, eta: float = 1.0, chunk: int = 20_000) -> tuple[float, dict]:
    """Two full-batch GD steps from 0 on :class:`BiasFunction`; returns the gradient gap at ``w_2``.

    The gap is ``||mean sample gradient - population gradient||`` at ``w_2``.
    The population gradient is a Monte Carlo mean over ``population_mc_n``
    fresh points. Only coordinates where ``w_2 > 0`` enter the norm term, so
    fresh bits are drawn there and the linear term elsewhere uses the
    equivalent Binomial(N, 1/2) per-coordinate counts.
    """
    f = BiasFunction(d, m, gamma, norm_weight)
    sample_seed, mc_seed = spawn_seeds(seed, 2)
    X = f.sample_points(m, check_rng(sample_seed))
    w1 = np.zeros(d)
    _, G1 = f.first_order(w1, X)
    g1 = G1.mean(axis=0)
    step1_exact = bool(np.array_equal(g1, f.gamma * f.signs(X).mean(axis=0)))
    w2 = gd_step(w1, g1, eta)
    P = np.flatnonzero(w2 > 0)
    all_zero = np.flatnonzero(~X.any(axis=0))
    iff_holds = bool(np.array_equal(P, all_zero))

    _, G2 = f.first_order(w2, X)
    empirical = G2.mean(axis=0)

    rng = check_rng(mc_seed)
    N = int(population_mc_n)
    ones = rng.binomial(N, 0.5, size=d).astype(float)
    norm_part = np.zeros(P.size)
    ones_P = np.zeros(P.size)
    done = 0
    while done < N:
        b = min(chunk, N - done)
        bits = rng.random((b, P.size)) < 0.5
        z = bits * w2[P]
        norm = np.sqrt(np.sum(z**2, axis=1))
        nz = norm > 0
        norm_part += (z[nz] / norm[nz, None]).sum(axis=0)
        ones_P += bits.sum(axis=0)
        done += b
    # on P the linear term uses the bits actually drawn
    ones[P] = ones_P
    population = f.gamma * (ones - (N - ones) / m) / N
    population[P] += f.norm_weight * norm_part / N
    gap = float(np.linalg.norm(empirical - population))
    return gap, {
        "m": m,
        "d": d,
        "gamma": f.gamma,
        "positive_coordinates": int(P.size),
        "flagged": bool(P.size == 0),
        "iff_holds": iff_holds,
        "step1_exact": step1_exact,
        "lipschitz": f.lipschitz,
    }
