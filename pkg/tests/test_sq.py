import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqgd.sq import (
    EmpiricalMeanOracle,
    FiniteDistribution,
    FiniteDomain,
    FixedQueryAnalyst,
    GaussianNoiseOracle,
    RangeContractError,
    ReplayAnalyst,
    Sample,
    SampleSplittingOracle,
    SQOracle,
    Transcript,
    TruthfulOracle,
    bisection_probes,
    boolean_wrap,
    empirical_value,
    eval_accuracy,
    eval_batch_accuracy,
    eval_posthoc,
    population_value,
    run_interaction,
)


def test_population_value_matches_loop(rng):
    D = FiniteDistribution.random(9, rng)
    q = rng.uniform(-1, 1, 9)
    assert population_value(q, D) == pytest.approx(sum(D.p[i] * q[i] for i in range(9)), abs=1e-15)


def test_population_value_batch(rng):
    D = FiniteDistribution.random(4, rng)
    Q = rng.uniform(-1, 1, (3, 4))
    np.testing.assert_allclose(population_value(Q, D), [population_value(q, D) for q in Q])


def test_empirical_value_counts_repeats():
    q = np.array([1.0, -1.0, 0.5])
    assert empirical_value(q, Sample(np.array([0, 0, 2, 1]))) == pytest.approx((1 + 1 + 0.5 - 1) / 4)


def test_query_range_rejected():
    D = FiniteDistribution.uniform(3)
    with pytest.raises(ValueError):
        population_value(np.array([0.0, 1.5, 0.0]), D)


def test_distribution_checks():
    with pytest.raises(ValueError):
        FiniteDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        FiniteDistribution(np.array([1.2, -0.2]))
    with pytest.raises(ValueError):
        FiniteDomain(0)


def test_mixture_is_uniform_over_components(rng):
    comps = [FiniteDistribution.random(3, rng) for _ in range(4)]
    mix = FiniteDistribution.mixture(comps)
    assert mix.domain.factors == (4, 3)
    np.testing.assert_allclose(mix.p.reshape(4, 3).sum(axis=1), 0.25)
    np.testing.assert_allclose(mix.p.reshape(4, 3)[2] * 4, comps[2].p)


def test_sample_frequencies_converge():
    D = FiniteDistribution(np.array([0.1, 0.2, 0.7]))
    s = D.sample(200_000, seed=1)
    freq = np.bincount(s.indices, minlength=3) / s.m
    np.testing.assert_allclose(freq, D.p, atol=5e-3)


def test_truthful_oracle_has_zero_error(rng):
    D = FiniteDistribution.random(6, rng)
    Q = rng.uniform(-1, 1, (20, 6))
    tr = run_interaction(FixedQueryAnalyst(Q, D), TruthfulOracle(D), D, m=10, seed=3)
    ok, frac = eval_accuracy(tr, 1e-12)
    assert ok and frac == 0.0


def test_empirical_oracle_is_posthoc_exact_and_matches_recount(rng):
    D = FiniteDistribution.random(6, rng)
    Q = rng.uniform(-1, 1, (5, 6))
    tr = run_interaction(FixedQueryAnalyst(Q, D), EmpiricalMeanOracle(), D, m=7, seed=4)
    brute = np.array([[np.mean([q[x] for x in tr.sample])] for q in Q])
    np.testing.assert_allclose(tr.answers, brute, atol=1e-15)
    pop, emp = tr.recompute()
    np.testing.assert_allclose(pop, tr.population)
    np.testing.assert_allclose(emp, tr.empirical)


def test_rerun_is_bit_identical(rng):
    D = FiniteDistribution.random(5, rng)
    Q = rng.uniform(-1, 1, (8, 5))
    a = run_interaction(FixedQueryAnalyst(Q, D), GaussianNoiseOracle(0.1), D, 20, seed=9)
    b = run_interaction(FixedQueryAnalyst(Q, D), GaussianNoiseOracle(0.1), D, 20, seed=9)
    assert a.to_json() == b.to_json()
    c = run_interaction(FixedQueryAnalyst(Q, D), GaussianNoiseOracle(0.1), D, 20, seed=10)
    assert a.to_json() != c.to_json()


def test_transcript_json_round_trip(rng):
    D = FiniteDistribution.random(4, rng)
    Q = rng.uniform(-1, 1, (3, 2, 4))
    tr = run_interaction(FixedQueryAnalyst(Q, D), EmpiricalMeanOracle(), D, 5, seed=0)
    back = Transcript.from_json(tr.to_json())
    np.testing.assert_array_equal(back.answers, tr.answers)
    np.testing.assert_array_equal(back.population, tr.population)
    assert back.to_json() == tr.to_json()
    assert tr.to_csv().count("\n") == 4
    assert json.loads(tr.to_json())["meta"]["k"] == 2


def test_sample_splitting_uses_disjoint_chunks():
    D = FiniteDistribution.uniform(10)
    q = np.linspace(-1, 1, 10)
    oracle = SampleSplittingOracle(4)
    oracle.reset(Sample(np.arange(8)))
    answers = [oracle.answer(q, t) for t in range(4)]
    expected = [q[c].mean() for c in np.array_split(np.arange(8), 4)]
    np.testing.assert_allclose(answers, expected)


class _BadOracle(SQOracle):
    def answer(self, query, t):
        return np.nan


def test_range_contract_names_round(rng):
    D = FiniteDistribution.uniform(3)
    with pytest.raises(RangeContractError, match="round 1"):
        run_interaction(FixedQueryAnalyst(np.zeros((2, 3)), D), _BadOracle(), D, 2)
    bad = ReplayAnalyst(lambda ans: np.full(3, 2.0) if ans else np.zeros(3), 2, D)
    with pytest.raises(RangeContractError, match="round 2"):
        run_interaction(bad, EmpiricalMeanOracle(), D, 2)


class _LoudOracle(SQOracle):
    def answer(self, query, t):
        return 3.0


def test_out_of_range_answers_are_clamped_and_flagged():
    D = FiniteDistribution.uniform(2)
    tr = run_interaction(FixedQueryAnalyst(np.ones((2, 2)), D), _LoudOracle(), D, 2)
    assert tr.n_clamped == 2
    assert np.all(tr.answers == 1.0)


def test_eval_accuracy_fraction():
    D = FiniteDistribution.uniform(2)
    Q = np.array([[1.0, 1.0], [-1.0, -1.0], [0.0, 0.0], [0.5, 0.5]])
    answers = iter([1.0, -0.5, 0.0, 0.5])

    class Fixed(SQOracle):
        def answer(self, query, t):
            return next(answers)

    tr = run_interaction(FixedQueryAnalyst(Q, D), Fixed(), D, 1)
    assert eval_accuracy(tr, 0.1) == (False, 0.25)
    assert eval_accuracy(tr, 0.1, gamma=0.25)[0]
    assert eval_posthoc(tr, 0.0)


def test_eval_batch_accuracy():
    D = FiniteDistribution.uniform(2)
    Q = np.zeros((4, 10, 2))
    errs = iter([np.r_[np.zeros(9), 1.0], np.zeros(10), np.r_[np.zeros(7), np.ones(3)], np.zeros(10)])

    class Fixed(SQOracle):
        def answer(self, query, t):
            return next(errs)

    tr = run_interaction(FixedQueryAnalyst(Q, D), Fixed(), D, 1)
    assert eval_batch_accuracy(tr, 0.5, gamma_T=0.25, gamma_k=0.1)
    assert not eval_batch_accuracy(tr, 0.5, gamma_T=0.0, gamma_k=0.1)
    assert eval_batch_accuracy(tr, 0.5, gamma_T=0.0, gamma_k=0.3)


@pytest.mark.parametrize("eps,probes", [(0.5, 2), (0.25, 3), (0.1, 5), (1 / 64, 7), (0.01, 8)])
def test_bisection_probe_count(eps, probes):
    assert bisection_probes(eps) == probes


@settings(max_examples=100, deadline=None)
@given(value=st.floats(-1, 1), eps=st.floats(1e-3, 0.5))
def test_bisection_recovers_value(value, eps):
    D = FiniteDistribution.uniform(1)
    wrap = boolean_wrap(FixedQueryAnalyst(np.array([[value]]), D), eps)
    answers = []
    for _ in range(wrap.probes):
        probe = wrap.ask(answers)
        assert np.all(np.abs(probe) <= 1.0)
        answers.append(1.0 if probe @ D.p >= 0 else -1.0)
    assert abs(wrap.inner_answers(answers)[0] - value) <= eps


def test_bisection_feeds_inner_analyst_midpoints(rng):
    D = FiniteDistribution.random(4, rng)
    q0 = rng.uniform(-1, 1, 4)
    seen = []

    def strategy(ans):
        seen.append(list(ans))
        return q0 if not ans else np.clip(q0 * ans[-1], -1, 1)

    inner = ReplayAnalyst(strategy, 2, D)
    wrap = boolean_wrap(inner, 0.05)
    tr = run_interaction(wrap, TruthfulOracle(D), D, 5)
    est = wrap.inner_answers(list(tr.answers[:, 0]))
    assert len(est) == 2
    assert abs(est[0] - q0 @ D.p) <= 0.05
    assert abs(est[1] - np.clip(q0 * est[0], -1, 1) @ D.p) <= 0.05
