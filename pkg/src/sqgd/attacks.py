"""Adversarial analysts and the reconstruction decoder.

* :class:`PadAttack` is an interactive membership attack. Every domain point
  is a user holding a secret one-time pad, and the analyst publishes only
  pad-encrypted query parameters.
* :class:`LADReconstructor` recovers a hidden vector ``v`` in ``[0, 1]^n``
  from approximate aggregate answers by least-absolute-deviation fitting.
* :class:`ComposedAnalyst` runs ``d`` single-query analysts in parallel
  through one batch of ``k`` product queries per round and decodes their
  individual answers with the reconstructor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_rng, spawn_seeds
from .sq import Analyst, FiniteDistribution

DEFAULT_PAD_CONSTANT = 4.0
DEFAULT_HORIZON_CAP = 200_000


# --------------------------------------------------------------------------
# one-time-pad interactive attack


def pad_horizon(m: int, gamma: float = 0.25, c: float = DEFAULT_PAD_CONSTANT) -> int:
    """``N = c m^2 ((1/4) / (1/2 - gamma))^4``; equals ``c m^2`` at gamma = 1/4."""
    if m < 2:
        raise ValueError("the pad attack needs m >= 2")
    if not gamma < 0.5:
        raise ValueError("the pad attack needs gamma < 1/2")
    return int(math.ceil(c * m * m * (0.25 / (0.5 - gamma)) ** 4))


class PadAttack(Analyst):
    """Interactive one-time-pad membership attack.

    The hidden distribution is uniform over ``N`` users ``(i, v_i)`` with pads
    ``v_i`` in ``{-1, +1}^N``. In round ``t`` the analyst draws a bias
    ``p_t = -cos(2 s)`` with ``s ~ U[delta, pi/2 - delta]`` and a private
    column ``c_t`` with mean ``p_t``. It publishes ``u_t(i) = c_t(i) v_i(t)``,
    or 0 for users it has already accused. The query evaluates to
    ``u_t(i) v_i(t)``, so it equals ``c_t(i)`` on every live user.

    Answers are rounded to a 0.01 grid. With ``A`` users accused so far the
    reference answer is ``r_t = p_t (1 - A/m)``. User ``i`` accumulates the
    score ``(a - r_t)(c_t(i) - p_t) / (1 - p_t^2)``. For a user outside the
    sample this is a zero-mean walk with conditional variance
    ``V_t = sum (a - r)^2 / (1 - p^2)``, and the user is accused once the
    score exceeds ``threshold * sqrt(V_t)``. A sample member's score drifts
    upward by about ``1/m`` per round. Accused users drop out of all later
    queries. An oracle that keeps answering from
    the sample then ends up answering about nobody.
    """

    boolean = False

    def __init__(self, m: int, gamma: float = 0.25, seed=0, c: float = DEFAULT_PAD_CONSTANT, cap: int = DEFAULT_HORIZON_CAP, delta: float = 0.2, threshold: float = 4.0, grid: float = 0.01):
        N = pad_horizon(m, gamma, c)
        if N > cap:
            raise ValueError(f"pad attack horizon N={N} exceeds the cap {cap}; lower m (or c) or raise the cap")
        self.m = int(m)
        self.gamma = gamma
        self.c = c
        self.N = N
        self.horizon = N
        self.delta = delta
        self.threshold = threshold
        self.grid = grid
        self.distribution = FiniteDistribution.uniform(N)
        self.seed = seed
        pad_seed, bias_seed, column_seed = spawn_seeds(seed, 3)
        # round t's pad column v_.(t) and private column c_t(.) come from
        # per-round children so replay never needs the whole N x N table
        self._pad_seeds = pad_seed.spawn(N)
        self._column_seeds = column_seed.spawn(N)
        s = check_rng(bias_seed).uniform(delta, np.pi / 2 - delta, size=N)
        self.biases = -np.cos(2.0 * s)
        self._reset_state()

    def _reset_state(self):
        self.scores = np.zeros(self.N)
        self.variance = 0.0
        self.accused = np.zeros(self.N, dtype=bool)
        self.accused_round = np.full(self.N, -1)
        self._seen: list[float] = []

    def pads(self, t: int) -> np.ndarray:
        return np.where(check_rng(self._pad_seeds[t]).random(self.N) < 0.5, 1, -1)

    def column(self, t: int) -> np.ndarray:
        p = self.biases[t]
        return np.where(check_rng(self._column_seeds[t]).random(self.N) < (1.0 + p) / 2.0, 1, -1)

    def public_parameter(self, t: int, pads=None) -> np.ndarray:
        """``u_t`` in ``{-1, 0, 1}^N``; only this and the rounded answers are public."""
        pads = self.pads(t) if pads is None else pads
        return np.where(self.accused, 0, self.column(t) * pads)

    def round_answer(self, a):
        return np.clip(np.round(np.asarray(a, dtype=float) / self.grid) * self.grid, -1.0, 1.0)

    def _consume(self, t: int, a: float):
        p = self.biases[t]
        live = ~self.accused
        # accused members answer 0, so a sample mean is centered near p (1 - A/m)
        ref = p * max(0.0, 1.0 - self.accused.sum() / self.m)
        col = self.column(t)
        self.scores[live] += (a - ref) * (col[live] - p) / (1.0 - p * p)
        self.variance += (a - ref) ** 2 / (1.0 - p * p)
        newly = live & (self.scores > self.threshold * math.sqrt(self.variance))
        self.accused |= newly
        self.accused_round[newly] = t
        self._seen.append(a)

    def ask(self, answers):
        rounded = self.round_answer(answers).tolist()
        if rounded[: len(self._seen)] != self._seen:
            self._reset_state()
        for t in range(len(self._seen), len(rounded)):
            self._consume(t, rounded[t])
        t = len(rounded)
        pads = self.pads(t)
        # q_t(i, v_i) = u_t(i) v_i(t)
        return (self.public_parameter(t, pads) * pads).astype(float)

    def summary(self, sample_indices) -> dict:
        members = np.zeros(self.N, dtype=bool)
        members[np.asarray(sample_indices)] = True
        return {
            "accused": int(self.accused.sum()),
            "true_positives": int((self.accused & members).sum()),
            "false_positives": int((self.accused & ~members).sum()),
            "members": int(members.sum()),
        }


def pad_attack(m: int, gamma: float = 0.25, seed=0, c: float = DEFAULT_PAD_CONSTANT, cap: int = DEFAULT_HORIZON_CAP) -> PadAttack:
    return PadAttack(m, gamma, seed=seed, c=c, cap=cap)


def run_pad_trial(m: int, oracle, seed, c: float = DEFAULT_PAD_CONSTANT, gamma: float = 0.25, err: float = 0.01) -> dict:
    """One attack trial; returns fail fractions for accuracy and post-hoc generalization at ``err``."""
    from .sq import run_interaction

    analyst_seed, run_seed = spawn_seeds(seed, 2)
    attack = PadAttack(m, gamma, seed=analyst_seed, c=c)
    tr = run_interaction(attack, oracle, attack.distribution, m, seed=run_seed)
    return {
        "m": m,
        "T": tr.T,
        "fail_fraction": float(np.mean(tr.errors > err)),
        "posthoc_fail_fraction": float(np.mean(tr.posthoc_gaps > err)),
        **attack.summary(tr.sample),
    }


def calibrate_pad_constant(oracle_factory, ms=(8, 16), grid=(0.25, 0.5, 1.0, 2.0, 4.0), trials: int = 20, target: float = 0.25, required: float = 0.8, seed: int = 0) -> float:
    """Smallest ``c`` on ``grid`` for which a ``required`` share of trials exceeds ``target`` at every ``m``.

    Also requires every sample member to be accused in that share of trials,
    so the attack has actually succeeded rather than riding on sampling noise.
    """
    for c in grid:
        ok = True
        for m in ms:
            wins = 0
            for s in spawn_seeds([seed, m], trials):
                r = run_pad_trial(m, oracle_factory(), s, c=c)
                wins += r["fail_fraction"] > target and r["true_positives"] == r["members"]
            ok &= wins >= required * trials
        if ok:
            return c
    raise RuntimeError("no constant on the grid reaches the target; extend the grid")


# --------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionInstance:
    """Bits ``S`` (n x k), coordinate queries ``Q`` (k x n) and a hidden target ``v``.

    Query ``j`` evaluates to ``2 S[i, j] - 1`` on row ``i``. The answer model
    is ``Q v / n``.
    """

    bits: np.ndarray
    target: np.ndarray
    seed: object = None

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def k(self) -> int:
        return self.bits.shape[1]

    @property
    def queries(self) -> np.ndarray:
        return 2.0 * self.bits.T - 1.0

    def answers(self, v=None) -> np.ndarray:
        v = self.target if v is None else np.asarray(v, dtype=float)
        return self.queries @ v / self.n


def make_reconstruction_instance(n: int, k: int, seed=0, target=None) -> ReconstructionInstance:
    if n < 1:
        raise ValueError("n must be at least 1")
    if k < n:
        raise ValueError(f"need at least as many queries as rows (k={k} < n={n})")
    bits_seed, target_seed = spawn_seeds(seed, 2)
    bits = (check_rng(bits_seed).random((n, k)) < 0.5).astype(np.int8)
    if target is None:
        target = (check_rng(target_seed).random(n) < 0.5).astype(float)
    target = np.asarray(target, dtype=float)
    if target.shape != (n,) or np.any(target < 0) or np.any(target > 1):
        raise ValueError("the target must be a vector in [0, 1]^n")
    return ReconstructionInstance(bits, target, seed)


def _lad_descent(A, b, v0, n_iter, step, tol):
    """Projected subgradient descent on ``||A v - b||_1`` over the unit box."""
    v = v0.copy()
    best_v, best = v.copy(), np.abs(A @ v - b).sum()
    history = np.empty(n_iter)
    for it in range(1, n_iter + 1):
        g = A.T @ np.sign(A @ v - b)
        norm = np.linalg.norm(g)
        if norm == 0:
            history[it - 1:] = best
            break
        v = np.clip(v - step / math.sqrt(it) * g / norm, 0.0, 1.0)
        obj = np.abs(A @ v - b).sum()
        if obj < best:
            best, best_v = obj, v.copy()
        history[it - 1] = best
    tail = history[int(0.9 * n_iter) - 1]
    # converged when the last tenth of the budget barely moved the objective
    converged = (tail - best) <= tol * max(1.0, np.abs(b).sum())
    return best_v, best, bool(converged)


class LADReconstructor(BaseEstimator):
    """Least-absolute-deviation decoder for ``v`` in ``[0, 1]^n``.

    ``fit(Q, answers)`` minimizes ``sum_j |(Q v)_j - n a_j|`` by projected
    subgradient descent with step ``step / sqrt(t)``, keeping the best
    iterate. With ``trim > 0`` the ``ceil(trim k)`` worst-fitting answers are
    dropped and the fit is rerun from the first solution. ``converged_`` is
    False (and a warning is raised) when the objective was still falling at
    the end of the budget.
    """

    def __init__(self, n_iter=3000, step=None, trim=0.0, tol=1e-3):
        self.n_iter = n_iter
        self.step = step
        self.trim = trim
        self.tol = tol

    def fit(self, queries, answers):
        Q = np.asarray(queries, dtype=float)
        a = np.asarray(answers, dtype=float)
        if Q.ndim != 2 or a.shape != (Q.shape[0],):
            raise ValueError(f"expected a (k, n) query matrix and k answers, got {Q.shape} and {a.shape}")
        k, n = Q.shape
        b = n * a
        step = 0.5 * math.sqrt(n) if self.step is None else self.step
        v, obj, conv = _lad_descent(Q, b, np.full(n, 0.5), self.n_iter, step, self.tol)
        keep = np.ones(k, dtype=bool)
        drop = math.ceil(self.trim * k) if self.trim > 0 else 0
        if 0 < drop < k - n:
            keep[np.argsort(np.abs(Q @ v - b))[k - drop:]] = False
            v, obj, conv = _lad_descent(Q[keep], b[keep], v, self.n_iter, step / 4, self.tol)
        self.coef_ = v
        self.objective_ = obj
        self.kept_ = keep
        self.converged_ = conv
        self.n_features_in_ = n
        if not conv:
            warnings.warn("LAD decoder did not converge within its iteration budget; returning the best iterate", RuntimeWarning, stacklevel=2)
        return self

    def predict(self, queries):
        check_is_fitted(self, "coef_")
        return np.asarray(queries, dtype=float) @ self.coef_ / self.n_features_in_


def reconstruct(inst: ReconstructionInstance, answers, gamma: float = 0.0, **kwargs) -> np.ndarray:
    answers = np.asarray(answers, dtype=float)
    if answers.shape != (inst.k,):
        raise ValueError(f"expected {inst.k} answers, got shape {answers.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = LADReconstructor(trim=gamma, **kwargs).fit(inst.queries, answers)
    return est.coef_


def corrupt_answers(answers, fraction: float, seed=0) -> np.ndarray:
    """Replace a ``fraction`` of the answers by arbitrary values in [-1, 1]."""
    rng = check_rng(seed)
    a = np.asarray(answers, dtype=float).copy()
    bad = rng.choice(a.size, size=int(math.ceil(fraction * a.size)), replace=False)
    a[bad] = rng.uniform(-1.0, 1.0, size=bad.size)
    return a


# --------------------------------------------------------------------------
# composed analyst


class ComposedAnalyst(Analyst):
    """Runs ``d`` sub-analysts through one width-``k`` batch per round.

    The product domain pairs row ``i`` of the reconstruction instance with a
    point ``x`` of sub-analyst ``i``'s domain. It carries the mixture
    ``p(i, x) = D_i(x) / d``, and point ``(i, x)`` has index ``i * n_x + x``.
    Query ``j`` of round ``t`` is ``Q[j, i] * q_{t,i}(x)``, so its population
    value is ``(1/d) sum_i Q[j, i] q_{t,i}(D_i)``. Sub-answers are decoded from
    the batch answers with the reconstructor, mapping ``[-1, 1]`` to the
    decoder's ``[0, 1]`` by ``x -> (x + 1) / 2``.
    """

    def __init__(self, subs: Sequence[Analyst], inst: ReconstructionInstance, T: int | None = None, gamma: float = 0.0, decoder_kwargs=None):
        if len(subs) != inst.n:
            raise ValueError(f"need one sub-analyst per instance row ({inst.n}), got {len(subs)}")
        for s in subs:
            if s.distribution is None:
                raise ValueError("every sub-analyst needs a distribution")
            if s.batch_size is not None:
                raise ValueError("sub-analysts must ask one query per round")
        sizes = {s.distribution.n for s in subs}
        if len(sizes) != 1:
            raise ValueError("sub-analyst domains must share a size")
        self.subs = list(subs)
        self.inst = inst
        self.gamma = gamma
        self.decoder_kwargs = decoder_kwargs or {}
        max_T = min(s.horizon for s in subs)
        self.horizon = max_T if T is None else int(T)
        if self.horizon > max_T:
            raise ValueError(f"horizon {self.horizon} exceeds a sub-analyst's horizon {max_T}")
        self.batch_size = inst.k
        self.n_x = sizes.pop()
        self.distribution = FiniteDistribution.mixture([s.distribution for s in subs])
        self._Q = inst.queries
        self._decoded: list[np.ndarray] = []
        self._raw: list[np.ndarray] = []

    def decode(self, batch_answers) -> np.ndarray:
        a = np.asarray(batch_answers, dtype=float)
        model = (a + self._Q.mean(axis=1)) / 2.0
        return 2.0 * reconstruct(self.inst, model, self.gamma, **self.decoder_kwargs) - 1.0

    def sub_answers(self, answers) -> list[np.ndarray]:
        """Decoded ``(a_{t,1}, .., a_{t,d})`` for every completed round."""
        answers = [np.asarray(a, dtype=float) for a in answers]
        n_ok = 0
        while n_ok < min(len(answers), len(self._raw)) and np.array_equal(answers[n_ok], self._raw[n_ok]):
            n_ok += 1
        del self._raw[n_ok:], self._decoded[n_ok:]
        for a in answers[n_ok:]:
            self._raw.append(a)
            self._decoded.append(self.decode(a))
        return list(self._decoded)

    def sub_queries(self, answers) -> np.ndarray:
        decoded = self.sub_answers(answers)
        if len(decoded) >= self.horizon:
            raise ValueError("sub-analyst horizon exhausted")
        return np.array([s.ask([float(r[i]) for r in decoded]) for i, s in enumerate(self.subs)])

    def ask(self, answers):
        sub_q = self.sub_queries(answers)  # (d, n_x)
        # (k, d, n_x) -> (k, d * n_x) with index i * n_x + x
        return (self._Q[:, :, None] * sub_q[None, :, :]).reshape(self.inst.k, -1)


def compose_analyst(subs: Sequence[Analyst], inst: ReconstructionInstance, T: int | None = None, gamma: float = 0.0) -> ComposedAnalyst:
    return ComposedAnalyst(subs, inst, T, gamma)
