"""Statistical-query interactions over finite domains.

A finite domain is the index set ``0..n-1``. Queries are tables of length
``n`` with entries in [-1, 1]; distributions are probability vectors over the
same indices, so population values are exact dot products rather than
estimates.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import check_positive, check_probability_vector, check_query, check_rng, sign, spawn_seeds


class RangeContractError(ValueError):
    """An analyst or oracle broke its range contract during an interaction."""

    def __init__(self, round_index: int, message: str):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {message}")


@dataclass(frozen=True)
class FiniteDomain:
    size: int
    factors: tuple[int, int] | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"domain size must be a positive integer, got {self.size!r}")
        if self.factors is not None and self.factors[0] * self.factors[1] != self.size:
            raise ValueError("a product domain must have size equal to the product of its factors")

    @classmethod
    def product(cls, first: "FiniteDomain", second: "FiniteDomain") -> "FiniteDomain":
        """Domain of pairs ``(i, x)`` flattened row-major as ``i * |second| + x``."""
        return cls(first.size * second.size, (first.size, second.size))


class FiniteDistribution:
    """Probability vector over a :class:`FiniteDomain`."""

    def __init__(self, p, domain: FiniteDomain | None = None):
        self.p = check_probability_vector(p)
        if domain is None:
            domain = FiniteDomain(self.p.size)
        if domain.size != self.p.size:
            raise ValueError(f"distribution has {self.p.size} weights for a domain of size {domain.size}")
        self.domain = domain

    @property
    def n(self) -> int:
        return self.domain.size

    @classmethod
    def uniform(cls, n: int) -> "FiniteDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def random(cls, n: int, seed=None, concentration: float = 1.0) -> "FiniteDistribution":
        rng = check_rng(seed)
        return cls(rng.dirichlet(np.full(n, concentration)))

    @classmethod
    def mixture(cls, components: Sequence["FiniteDistribution"]) -> "FiniteDistribution":
        """Pick a component uniformly at random, then draw from it.

        The result lives on the product domain ``[len(components)] x X``.
        """
        sizes = {c.n for c in components}
        if len(sizes) != 1:
            raise ValueError("mixture components must share a domain")
        n = sizes.pop()
        d = len(components)
        p = np.concatenate([c.p for c in components]) / d
        p /= p.sum()
        return cls(p, FiniteDomain.product(FiniteDomain(d), FiniteDomain(n)))

    def sample(self, m: int, seed=None) -> "Sample":
        if m < 1:
            raise ValueError("sample size must be at least 1")
        rng = check_rng(seed)
        idx = rng.choice(self.n, size=m, p=self.p)
        return Sample(np.sort(idx), seed if isinstance(seed, int) else None)

    def __repr__(self):
        return f"FiniteDistribution(n={self.n})"


@dataclass(frozen=True)
class Sample:
    indices: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("sample indices must be one-dimensional")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return int(self.indices.size)

    def check_domain(self, n: int):
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValueError(f"sample index out of range for a domain of size {n}")


def population_value(q, dist: FiniteDistribution):
    """Exact population mean ``sum_i p(i) q(i)`` (vectorized over a batch)."""
    q = check_query(q, dist.n)
    out = q @ dist.p
    return float(out) if q.ndim == 1 else out


def empirical_value(q, sample: Sample):
    """Sample mean ``(1/m) sum_j q(x_j)`` (vectorized over a batch)."""
    if sample.m == 0:
        raise ValueError("empirical value of an empty sample")
    q = np.asarray(q, dtype=float)
    sample.check_domain(q.shape[-1])
    out = q[..., sample.indices].mean(axis=-1)
    return float(out) if q.ndim == 1 else out


# --------------------------------------------------------------------------
# analysts and oracles


class Analyst:
    """Adaptive party of an interaction.

    ``ask`` receives the answers to all previous rounds and returns the next
    query table, or a ``(k, n)`` batch when ``batch_size`` is set. It must be a
    function of the answer prefix so that transcripts can be replayed.
    Boolean analysts only look at ``sign(a)`` of each answer.
    """

    horizon: int = 1
    batch_size: int | None = None
    boolean: bool = False
    distribution: FiniteDistribution | None = None

    def ask(self, answers: Sequence) -> np.ndarray:
        raise NotImplementedError


class FixedQueryAnalyst(Analyst):
    """Non-adaptive analyst replaying a fixed list of queries."""

    def __init__(self, queries, distribution: FiniteDistribution | None = None):
        self.queries = np.asarray(queries, dtype=float)
        self.horizon = len(self.queries)
        self.batch_size = None if self.queries.ndim == 2 else self.queries.shape[1]
        self.distribution = distribution

    def ask(self, answers):
        return self.queries[len(answers)]


class SQOracle:
    """Answers queries from a finite sample; stateful across rounds."""

    def reset(self, sample: Sample, seed=None) -> None:
        self.sample = sample
        self.rng = check_rng(seed)

    def answer(self, query: np.ndarray, t: int):
        raise NotImplementedError


class TruthfulOracle(SQOracle):
    """Returns exact population values. Needs the distribution, not the sample."""

    def __init__(self, distribution: FiniteDistribution):
        self.distribution = distribution

    def answer(self, query, t):
        return np.asarray(query, dtype=float) @ self.distribution.p


class EmpiricalMeanOracle(SQOracle):
    def answer(self, query, t):
        return np.asarray(query, dtype=float)[..., self.sample.indices].mean(axis=-1)


class GaussianNoiseOracle(SQOracle):
    """Empirical mean plus N(0, sigma^2) noise, clipped to [-1, 1]."""

    def __init__(self, sigma: float):
        self.sigma = check_positive(sigma, "sigma", strict=False)

    def answer(self, query, t):
        q = np.asarray(query, dtype=float)
        mean = q[..., self.sample.indices].mean(axis=-1)
        return np.clip(mean + self.rng.normal(scale=self.sigma, size=np.shape(mean)), -1.0, 1.0)


class SampleSplittingOracle(SQOracle):
    """Answers round ``t`` from its own disjoint chunk of the sample.

    With fewer points than rounds the chunks are reused cyclically.
    """

    def __init__(self, T: int):
        self.T = int(T)

    def reset(self, sample, seed=None):
        super().reset(sample, seed)
        n_chunks = min(self.T, sample.m)
        self.chunks = np.array_split(sample.indices, n_chunks)

    def answer(self, query, t):
        chunk = self.chunks[t % len(self.chunks)]
        return np.asarray(query, dtype=float)[..., chunk].mean(axis=-1)


# --------------------------------------------------------------------------
# transcripts


@dataclass
class Round:
    queries: np.ndarray  # (k, n)
    answers: np.ndarray  # (k,) raw oracle output
    population: np.ndarray  # (k,)
    empirical: np.ndarray  # (k,)
    clamped: bool = False

    @property
    def clipped_answers(self) -> np.ndarray:
        return np.clip(self.answers, -1.0, 1.0)


@dataclass
class Transcript:
    rounds: list[Round]
    m: int
    T: int
    k: int | None
    seed: int | None
    distribution: np.ndarray
    sample: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def answers(self) -> np.ndarray:
        return np.array([r.clipped_answers for r in self.rounds])

    @property
    def population(self) -> np.ndarray:
        return np.array([r.population for r in self.rounds])

    @property
    def empirical(self) -> np.ndarray:
        return np.array([r.empirical for r in self.rounds])

    @property
    def errors(self) -> np.ndarray:
        """``|a_{t,i} - q_{t,i}(D)|`` with answers clamped to [-1, 1]; shape (T, k)."""
        return np.abs(self.answers - self.population)

    @property
    def posthoc_gaps(self) -> np.ndarray:
        return np.abs(self.empirical - self.population)

    @property
    def n_clamped(self) -> int:
        return sum(r.clamped for r in self.rounds)

    def recompute(self):
        """Recompute population and empirical values from the stored queries."""
        pop = np.array([r.queries @ self.distribution for r in self.rounds])
        emp = np.array([r.queries[:, self.sample].mean(axis=1) for r in self.rounds])
        return pop, emp

    def to_records(self) -> list[dict]:
        records = []
        for t, r in enumerate(self.rounds, start=1):
            single = self.k is None
            records.append(
                {
                    "round": t,
                    "queries": r.queries[0].tolist() if single else r.queries.tolist(),
                    "answers": float(r.answers[0]) if single else r.answers.tolist(),
                    "population": float(r.population[0]) if single else r.population.tolist(),
                    "empirical": float(r.empirical[0]) if single else r.empirical.tolist(),
                    "clamped": r.clamped,
                }
            )
        return records

    def to_json(self) -> str:
        meta = {
            "m": self.m,
            "T": self.T,
            "k": self.k,
            "seed": self.seed,
            "distribution": self.distribution.tolist(),
            "sample": self.sample.tolist(),
            **self.extra,
        }
        return json.dumps({"meta": meta, "rounds": self.to_records()})

    @classmethod
    def from_json(cls, text: str) -> "Transcript":
        obj = json.loads(text)
        meta = dict(obj["meta"])
        k = meta.pop("k")
        rounds = []
        for rec in obj["rounds"]:
            as2d = (lambda v: np.atleast_1d(np.asarray(v, dtype=float))) if k is not None else (lambda v: np.array([v], dtype=float))
            queries = np.asarray(rec["queries"], dtype=float)
            rounds.append(
                Round(
                    queries=queries if k is not None else queries[None, :],
                    answers=as2d(rec["answers"]),
                    population=as2d(rec["population"]),
                    empirical=as2d(rec["empirical"]),
                    clamped=rec["clamped"],
                )
            )
        return cls(
            rounds=rounds,
            m=meta.pop("m"),
            T=meta.pop("T"),
            k=k,
            seed=meta.pop("seed"),
            distribution=np.asarray(meta.pop("distribution")),
            sample=np.asarray(meta.pop("sample"), dtype=np.int64),
            extra=meta,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "k", "max_abs_error", "mean_abs_error", "max_posthoc_gap", "clamped"])
        for t, (err, gap, r) in enumerate(zip(self.errors, self.posthoc_gaps, self.rounds), start=1):
            writer.writerow([t, err.size, f"{err.max():.12g}", f"{err.mean():.12g}", f"{gap.max():.12g}", int(r.clamped)])
        return buf.getvalue()


def run_interaction(analyst: Analyst, oracle: SQOracle, distribution: FiniteDistribution, m: int, T: int | None = None, seed=0) -> Transcript:
    """Run ``T`` rounds of analyst/oracle interaction on a fresh sample.

    The sample and the oracle's private randomness are drawn from independent
    children of ``seed``; reruns with the same seed are bit-identical.
    """
    T = analyst.horizon if T is None else int(T)
    if T < 1:
        raise ValueError("the horizon T must be at least 1")
    if T > analyst.horizon:
        raise ValueError(f"requested {T} rounds but the analyst's horizon is {analyst.horizon}")
    sample_seed, oracle_seed = spawn_seeds(seed, 2)
    sample = distribution.sample(m, check_rng(sample_seed))
    oracle.reset(sample, check_rng(oracle_seed))
    n = distribution.n
    k = analyst.batch_size

    rounds: list[Round] = []
    answers: list = []
    for t in range(T):
        raw_q = analyst.ask(list(answers))
        try:
            q = check_query(raw_q, n)
        except ValueError as exc:
            raise RangeContractError(t + 1, f"analyst emitted an invalid query ({exc})") from None
        q2 = q.reshape(-1, n)
        if k is not None and q2.shape[0] != k:
            raise RangeContractError(t + 1, f"analyst emitted {q2.shape[0]} queries, expected a batch of {k}")
        a = np.asarray(oracle.answer(q if k is not None else q2[0], t), dtype=float).reshape(-1)
        if a.size != q2.shape[0]:
            raise RangeContractError(t + 1, f"oracle returned {a.size} answers for {q2.shape[0]} queries")
        if not np.all(np.isfinite(a)):
            raise RangeContractError(t + 1, "oracle returned a non-finite answer")
        clamped = bool(np.any(np.abs(a) > 1.0))
        rounds.append(
            Round(
                queries=q2,
                answers=a,
                population=q2 @ distribution.p,
                empirical=q2[:, sample.indices].mean(axis=1),
                clamped=clamped,
            )
        )
        answers.append(a if k is not None else float(a[0]))
    return Transcript(
        rounds=rounds,
        m=m,
        T=T,
        k=k,
        seed=seed if isinstance(seed, int) else None,
        distribution=distribution.p.copy(),
        sample=sample.indices.copy(),
    )


# --------------------------------------------------------------------------
# evaluators


def eval_accuracy(tr: Transcript, eps: float, gamma: float = 0.0) -> tuple[bool, float]:
    """Fraction of queries answered with error above ``eps``; pass iff it is at most ``gamma``."""
    bad = tr.errors > eps
    fail_fraction = float(bad.mean())
    return fail_fraction <= gamma + 1e-12, fail_fraction


def eval_posthoc(tr: Transcript, eps: float) -> bool:
    return bool(np.all(tr.posthoc_gaps <= eps))


def eval_batch_accuracy(tr: Transcript, eps: float, gamma_T: float, gamma_k: float) -> bool:
    """At least ``(1 - gamma_T) T`` rounds must each answer ``(1 - gamma_k) k`` queries within ``eps``."""
    errors = tr.errors
    T, k = errors.shape
    good_per_round = (errors <= eps).sum(axis=1)
    good_rounds = int(np.sum(good_per_round >= (1.0 - gamma_k) * k - 1e-9))
    return good_rounds >= (1.0 - gamma_T) * T - 1e-9


# --------------------------------------------------------------------------
# Boolean reduction by bisection


def bisection_probes(eps: float) -> int:
    """Number of sign probes needed to shrink [-1, 1] to width at most ``eps``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return math.ceil(math.log2(2.0 / eps) - 1e-12)


class BooleanWrap(Analyst):
    """Boolean analyst that recovers each inner value query by bisection.

    Every inner query ``q`` becomes ``bisection_probes(eps)`` sign probes of
    ``(q - b) / 2`` for thresholds ``b`` halving the current interval. The
    interval midpoint is handed back to the inner analyst as its answer.
    """

    boolean = True

    def __init__(self, inner: Analyst, eps: float):
        if inner.batch_size is not None:
            raise ValueError("BooleanWrap needs an analyst asking one query per round")
        self.inner = inner
        self.eps = eps
        self.probes = bisection_probes(eps)
        self.horizon = inner.horizon * self.probes
        self.distribution = inner.distribution

    @staticmethod
    def _interval(signs) -> tuple[float, float]:
        lo, hi = -1.0, 1.0
        for s in signs:
            mid = 0.5 * (lo + hi)
            if s > 0:
                lo = mid
            else:
                hi = mid
        return lo, hi

    def inner_answers(self, answers) -> list[float]:
        """Midpoint estimates for every inner query completed by ``answers``."""
        signs = sign(answers).tolist() if len(answers) else []
        P = self.probes
        return [sum(self._interval(signs[j * P : (j + 1) * P])) / 2 for j in range(len(signs) // P)]

    def ask(self, answers):
        signs = sign(answers).tolist() if len(answers) else []
        j, done = divmod(len(signs), self.probes)
        q = np.asarray(self.inner.ask(self.inner_answers(answers[: j * self.probes])), dtype=float)
        lo, hi = self._interval(signs[j * self.probes :])
        return (q - 0.5 * (lo + hi)) / 2.0


def boolean_wrap(analyst: Analyst, eps: float) -> BooleanWrap:
    return BooleanWrap(analyst, eps)


class ReplayAnalyst(Analyst):
    """Analyst given by a callable ``strategy(answers) -> query``."""

    def __init__(self, strategy, horizon: int, distribution=None, boolean=False, batch_size=None):
        self.strategy = strategy
        self.horizon = horizon
        self.distribution = distribution
        self.boolean = boolean
        self.batch_size = batch_size

    def ask(self, answers):
        return self.strategy(list(answers))
