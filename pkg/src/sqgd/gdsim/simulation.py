"""Running gradient descent on the simulating function.

Round ``t`` (1-based) hands the oracle a gradient-access table built from a
single node: the node reached by the first ``(t - 1) // 2`` answers. Odd
rounds use its ``h1`` table and even rounds its active ``h2`` branch. After
round ``2i`` the ``i``-th answer is read off the oracle output: ``+1`` iff
the output at the node's local coordinate 3 is below ``-1/2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_rng, spawn_seeds
from ..convex import FOOracle, GDRun, GradientAccess, project_unit_ball
from ..sq import FiniteDistribution, SQOracle
from .function import SimFunction, SimNode, SimParams, make_node, regime_report
from .hiding import HidingEmbedding
from .tree import BooleanAnalystTree

TABLE_TOL = 1e-9


def node_table(node: SimNode, t: int, w, X) -> tuple[np.ndarray, np.ndarray]:
    """Round-``t`` access table of ``node`` at points ``X`` (local coordinates)."""
    w = np.asarray(w, dtype=float)
    X = np.asarray(X)
    if t % 2 == 1:
        return node.h1(w, X)
    value, grad, _ = node.h2(w)
    return np.full(X.size, value), np.tile(grad, (X.size, 1))


def rho(f: SimFunction, t: int, prefix, w, X) -> tuple[np.ndarray, np.ndarray]:
    """Gradient-access table of round ``t`` given the answer ``prefix``."""
    prefix = tuple(int(s) for s in prefix)
    if len(prefix) != (t - 1) // 2:
        raise ValueError(f"round {t} needs an answer prefix of length {(t - 1) // 2}, got {len(prefix)}")
    return node_table(f.node(prefix), t, w, X)


def kappa_node(node: SimNode, output) -> int:
    """Answer read from an even-round output at ``node``."""
    return 1 if output[node.coords[3]] < -0.5 else -1


def kappa(f: SimFunction, i: int, outputs) -> int:
    """The ``i``-th answer (1-based) from outputs ``O(1)..O(2i)`` in local coordinates."""
    if len(outputs) < 2 * i:
        raise ValueError(f"answer {i} needs {2 * i} outputs, got {len(outputs)}")
    answers: list[int] = []
    for j in range(1, i + 1):
        answers.append(kappa_node(f.node(tuple(answers)), outputs[2 * j - 1]))
    return answers[-1]


@dataclass
class SimTranscript:
    T: int
    eta: float
    trajectory: np.ndarray  # (2T, d): w_1..w_{2T}
    final: np.ndarray  # w_{2T+1}
    outputs: np.ndarray  # (2T, d)
    answers: list[int]
    query_values: list[float]  # q_i(D) at the node answered in round 2i
    table_values: np.ndarray  # (2T, m) access tables at the sample points
    table_grads: np.ndarray  # (2T, m, dim) in local coordinates
    population_gradients: np.ndarray  # (2T, d) exact E grad f(w_t, x)
    table_errors: np.ndarray  # (2T,) max gap between table and exact first-order values
    sample: np.ndarray
    regime: dict
    projected: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def output_errors(self) -> np.ndarray:
        return np.linalg.norm(self.outputs - self.population_gradients, axis=1)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.trajectory, axis=1)

    def to_dict(self, eps1: float | None = None, eps2: float | None = None) -> dict:
        out = {
            "T": self.T,
            "eta": self.eta,
            "trajectory": self.trajectory.tolist(),
            "outputs": self.outputs.tolist(),
            "answers": self.answers,
            "query_values": self.query_values,
            "table_errors": self.table_errors.tolist(),
            "regime": self.regime,
        }
        if eps1 is not None:
            out["verdicts"] = check_sim_accuracy(self, eps1, eps2)
        return out

    def to_json(self, eps1: float | None = None, eps2: float | None = None) -> str:
        return json.dumps(self.to_dict(eps1, eps2))


def _regime_holds(T, params) -> bool:
    return regime_report(T, params)["T < 1/(4 eta)"]


def run_simulation(tree: BooleanAnalystTree, oracle: FOOracle, distribution: FiniteDistribution | None = None, params: SimParams | None = None, m: int = 50, seed=0, hiding: HidingEmbedding | int | None = None) -> SimTranscript:
    """``2T`` rounds of projected GD on the simulating function of ``tree``.

    ``hiding`` is an embedding, a target dimension (random embedding), or
    ``None`` for the identity. The oracle sees tables and iterates in the
    hidden space only.
    """
    params = (params or SimParams()).validate(tree.depth)
    D = tree.distribution if distribution is None else distribution
    if D is None:
        raise ValueError("run_simulation needs a distribution")
    fn_seed, hide_seed, sample_seed, oracle_seed = spawn_seeds(seed, 4)
    f = SimFunction.build(tree, params, seed=int(fn_seed.generate_state(1)[0]))
    f.distribution = D
    if hiding is None:
        emb = HidingEmbedding.identity(f.dim)
    elif isinstance(hiding, HidingEmbedding):
        emb = hiding
    else:
        emb = HidingEmbedding.random(f.dim, int(hiding), check_rng(hide_seed))
    sample = D.sample(m, check_rng(sample_seed)).indices
    oracle.reset(sample, check_rng(oracle_seed))
    domain = np.arange(D.n)
    T = tree.depth
    regime_ok = _regime_holds(T, params)

    w = emb.lift(f.initial_point())
    answers: list[int] = []
    traj, outs, qvals, tv, tg, pops, terr, proj = [], [], [], [], [], [], [], []
    for t in range(1, 2 * T + 1):
        node = f.node(tuple(answers[: (t - 1) // 2]))
        w_loc = emb.restrict(w)

        def evaluate(X, node=node, t=t, w_loc=w_loc):
            values, grads = node_table(node, t, w_loc, X)
            return values, emb.lift(grads)

        O = np.asarray(oracle.estimate(w.copy(), GradientAccess(w, evaluate), t - 1), dtype=float)
        if O.shape != (emb.d,) or not np.all(np.isfinite(O)):
            raise FloatingPointError(f"round {t}: oracle returned a non-finite or misshapen output")
        values, grads = node_table(node, t, w_loc, domain)
        true_values, true_grads = f.first_order(w_loc, domain)
        traj.append(w)
        outs.append(O)
        tv.append(values[sample])
        tg.append(grads[sample])
        pops.append(emb.lift(D.p @ true_grads))
        terr.append(max(np.abs(values - true_values).max(), np.abs(grads - true_grads).max()))
        if t % 2 == 0:
            answers.append(kappa_node(node, emb.restrict(O)))
            qvals.append(float(node.query @ D.p))
        step = w - params.eta * O
        w = project_unit_ball(step)
        bound = not np.array_equal(w, step)
        if bound and regime_ok:
            raise RuntimeError(f"round {t}: projection was active although T < 1/(4 eta) holds")
        proj.append(bound)
    return SimTranscript(
        T=T,
        eta=params.eta,
        trajectory=np.array(traj),
        final=w,
        outputs=np.array(outs),
        answers=answers,
        query_values=qvals,
        table_values=np.array(tv),
        table_grads=np.array(tg),
        population_gradients=np.array(pops),
        table_errors=np.array(terr),
        sample=sample,
        regime=regime_report(T, params),
        projected=np.array(proj),
        extra={"function": f, "embedding": emb},
    )


def check_sim_accuracy(tr: SimTranscript, eps1: float, eps2: float) -> list[dict]:
    """Per-round verdicts of the conditional simulation contract.

    Round ``t0`` is checked only if every earlier output was within ``eps1``
    of the exact expected gradient; otherwise it passes vacuously. A checked
    round needs its access table to equal the exact first-order values. If
    its own output is also accurate and ``t0 = 2i``, answer ``i`` must
    satisfy ``a = +1 => q(D) > -eps2`` and ``a = -1 => q(D) < eps2``.
    """
    acc = tr.output_errors <= eps1
    verdicts = []
    for t0 in range(1, 2 * tr.T + 1):
        premise = bool(np.all(acc[: t0 - 1]))
        v = {"t": t0, "premise": premise, "gradient_ok": None, "answer_ok": None}
        if premise:
            v["gradient_ok"] = bool(tr.table_errors[t0 - 1] <= TABLE_TOL)
            if acc[t0 - 1] and t0 % 2 == 0:
                a, qv = tr.answers[t0 // 2 - 1], tr.query_values[t0 // 2 - 1]
                v["answer_ok"] = bool(qv > -eps2) if a > 0 else bool(qv < eps2)
        v["pass"] = (not premise) or (v["gradient_ok"] and v["answer_ok"] is not False)
        verdicts.append(v)
    return verdicts


# --------------------------------------------------------------------------
# statistical queries answered by gradient descent


class SQOracleFromFOA(SQOracle):
    """Boolean statistical-query oracle driven by a first-order-access oracle.

    Every query of the (Boolean) analyst becomes a node of the simulating
    function, built on demand along the answer path. Two GD rounds are run
    on it and the answer is extracted from the second output. The access
    table of every round is stored over the whole domain so that accuracy
    and post-hoc generalization can be recounted afterwards.
    """

    def __init__(self, foa: FOOracle, T: int, params: SimParams | None = None, hiding: HidingEmbedding | int | None = None, seed=0):
        self.foa = foa
        self.T = int(T)
        self.params = (params or SimParams()).validate(self.T)
        self.hiding = hiding
        self.seed = seed

    def reset(self, sample, seed=None):
        super().reset(sample, seed)
        fn_seed, hide_seed, foa_seed = spawn_seeds(self.seed, 3)
        self.fn_seed = int(fn_seed.generate_state(1)[0])
        dim = 4 * 2**self.T - 3
        if self.hiding is None:
            self.embedding = HidingEmbedding.identity(dim)
        elif isinstance(self.hiding, HidingEmbedding):
            self.embedding = self.hiding
        else:
            self.embedding = HidingEmbedding.random(dim, int(self.hiding), check_rng(hide_seed))
        self.foa.reset(sample.indices, check_rng(foa_seed))
        self.w = self.embedding.lift(self._start())
        self.answers: list[int] = []
        self.nodes: list[SimNode] = []
        self.trajectory, self.outputs, self.tables = [], [], []

    def _start(self):
        w = np.zeros(self.embedding.dim)
        w[0] = self.params.eta
        return w

    def answer(self, query, t):
        if len(self.answers) >= self.T:
            raise ValueError(f"the simulation's horizon of {self.T} queries is exhausted")
        node = make_node(self.T, tuple(self.answers), query, self.params, self.fn_seed)
        self.nodes.append(node)
        emb = self.embedding
        n = np.asarray(query).size
        for r in (2 * len(self.answers) + 1, 2 * len(self.answers) + 2):
            w_loc = emb.restrict(self.w)

            def evaluate(X, r=r, w_loc=w_loc):
                values, grads = node_table(node, r, w_loc, X)
                return values, emb.lift(grads)

            O = np.asarray(self.foa.estimate(self.w.copy(), GradientAccess(self.w, evaluate), r - 1), dtype=float)
            if O.shape != (emb.d,) or not np.all(np.isfinite(O)):
                raise FloatingPointError(f"round {r}: first-order oracle returned a non-finite or misshapen output")
            self.trajectory.append(self.w)
            self.outputs.append(O)
            self.tables.append(node_table(node, r, w_loc, np.arange(n)))
            self.w = project_unit_ball(self.w - self.params.eta * O)
        a = kappa_node(node, emb.restrict(self.outputs[-1]))
        self.answers.append(a)
        return float(a)

    def to_gd_run(self, distribution: FiniteDistribution) -> GDRun:
        """The inner GD run, with population and sample gradients read from the stored tables."""
        emb = self.embedding
        idx = self.sample.indices
        pop = np.array([emb.lift(distribution.p @ g) for _, g in self.tables])
        emp = np.array([emb.lift(g[idx].mean(axis=0)) for _, g in self.tables])
        traj = np.array(self.trajectory)
        return GDRun(
            trajectory=traj,
            final=self.w,
            estimates=np.array(self.outputs),
            population_gradients=pop,
            empirical_gradients=emp,
            points=idx,
            eta=self.params.eta,
            projected=np.zeros(len(traj), dtype=bool),
        )


def sq_oracle_from_foa(foa: FOOracle, eta: float = 1 / 800, T: int = 1, hiding=None, seed=0, **params) -> SQOracleFromFOA:
    return SQOracleFromFOA(foa, T, SimParams(eta=eta, **params), hiding, seed)


class GDSimulator(BaseEstimator):
    """Estimator front end for :func:`run_simulation`.

    ``fit(tree, oracle)`` runs the simulation; ``answers_`` holds the
    emitted answers and ``verdicts_`` the conditional accuracy checks at
    ``(eps, margin * eps)``.
    """

    def __init__(self, eta=1 / 800, eps=1 / 400, a=1 / 16, c=None, level_ratio=1.5, sample_size=50, hiding_dim=None, margin=99.0, random_state=0):
        self.eta = eta
        self.eps = eps
        self.a = a
        self.c = c
        self.level_ratio = level_ratio
        self.sample_size = sample_size
        self.hiding_dim = hiding_dim
        self.margin = margin
        self.random_state = random_state

    def _params(self) -> SimParams:
        return SimParams(eta=self.eta, eps=self.eps, a=self.a, c=self.c, level_ratio=self.level_ratio)

    def fit(self, tree: BooleanAnalystTree, oracle: FOOracle):
        self.transcript_ = run_simulation(tree, oracle, params=self._params(), m=self.sample_size, seed=self.random_state, hiding=self.hiding_dim)
        self.answers_ = list(self.transcript_.answers)
        self.verdicts_ = check_sim_accuracy(self.transcript_, self.eps, self.margin * self.eps)
        return self

    def score(self, tree: BooleanAnalystTree) -> float:
        """Share of answers with margin above ``margin * eps`` that match ``sign(q(D))``."""
        check_is_fitted(self, "transcript_")
        tr = self.transcript_
        qv = np.asarray(tr.query_values)
        decided = np.abs(qv) > self.margin * self.eps
        if not decided.any():
            return 1.0
        return float(np.mean(np.where(qv >= 0, 1, -1)[decided] == np.asarray(tr.answers)[decided]))
