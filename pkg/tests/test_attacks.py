import warnings

import numpy as np
import pytest
from scipy.optimize import linprog
from sklearn.base import clone

from sqgd.attacks import (
    ComposedAnalyst,
    LADReconstructor,
    PadAttack,
    corrupt_answers,
    make_reconstruction_instance,
    pad_attack,
    pad_horizon,
    reconstruct,
    run_pad_trial,
)
from sqgd.sq import EmpiricalMeanOracle, FiniteDistribution, ReplayAnalyst, TruthfulOracle, run_interaction


# --------------------------------------------------------------------------
# pad attack


def test_pad_horizon_formula():
    assert pad_horizon(8, 0.25, 4.0) == 256
    assert pad_horizon(16, 0.25, 1.0) == 256
    # (1/4 / (1/2 - 0.375))^4 = 16
    assert pad_horizon(4, 0.375, 1.0) == 16 * 16


def test_pad_preconditions():
    with pytest.raises(ValueError, match="m >= 2"):
        pad_attack(1)
    with pytest.raises(ValueError, match="gamma < 1/2"):
        pad_attack(4, gamma=0.5)
    with pytest.raises(ValueError, match="lower m"):
        pad_attack(300)


def test_pad_query_decrypts_to_private_column():
    att = pad_attack(4, seed=3)
    q = att.ask([])
    assert set(np.unique(q)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(q, att.column(0))
    u = att.public_parameter(0)
    np.testing.assert_array_equal(u * att.pads(0), att.column(0))


def test_pad_columns_have_drawn_bias():
    att = PadAttack(8, seed=1, c=64.0)  # N = 4096
    means = np.array([att.column(t).mean() for t in range(40)])
    assert np.abs(means - att.biases[:40]).max() < 5 * np.sqrt(1 / att.N)
    assert np.all(np.abs(att.biases) <= np.cos(0.4) + 1e-12)


def test_pad_accused_users_are_zeroed():
    att = pad_attack(4, seed=0)
    att.ask([])
    att.accused[:5] = True
    q = att.ask([0.0])
    assert np.all(q[:5] == 0.0) and np.all(np.abs(q[5:]) == 1.0)


def test_pad_replay_depends_only_on_rounded_answers():
    a = pad_attack(4, seed=11)
    b = pad_attack(4, seed=11)
    answers = list(np.random.default_rng(0).uniform(-1, 1, 30))
    jitter = [x + 0.001 if abs(x / 0.01 - round(x / 0.01)) < 0.3 else x for x in answers]
    for t in range(30):
        np.testing.assert_array_equal(a.ask(answers[:t]), b.ask(jitter[:t]))
    # going back in the transcript replays the earlier state
    np.testing.assert_array_equal(a.ask(answers[:5]), b.ask(answers[:5]))


def test_pad_truthful_oracle_never_errs():
    att = pad_attack(4, seed=2)
    tr = run_interaction(att, TruthfulOracle(att.distribution), att.distribution, 4, seed=2)
    assert np.max(tr.errors) == 0.0


def test_pad_attack_accuses_members_of_empirical_oracle():
    r = run_pad_trial(8, EmpiricalMeanOracle(), seed=5)
    assert r["true_positives"] == r["members"]
    assert r["false_positives"] <= 1
    assert r["fail_fraction"] > 0.25


# --------------------------------------------------------------------------
# reconstruction


def test_instance_shapes_and_model():
    inst = make_reconstruction_instance(5, 40, seed=1)
    assert inst.queries.shape == (40, 5)
    assert set(np.unique(inst.queries)) == {-1.0, 1.0}
    brute = [np.mean([(2 * inst.bits[i, j] - 1) * inst.target[i] for i in range(5)]) for j in range(40)]
    np.testing.assert_allclose(inst.answers(), brute)
    with pytest.raises(ValueError):
        make_reconstruction_instance(5, 4)


def test_single_row_reconstructs_exactly():
    inst = make_reconstruction_instance(1, 3, seed=0, target=[0.7])
    assert reconstruct(inst, inst.answers()) == pytest.approx([0.7], abs=1e-3)


def _lp_lad(A, b):
    """min ||A v - b||_1 over v in [0, 1]^n as a linear program."""
    k, n = A.shape
    c = np.r_[np.zeros(n), np.ones(k)]
    A_ub = np.block([[A, -np.eye(k)], [-A, -np.eye(k)]])
    b_ub = np.r_[b, -b]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, 1)] * n + [(0, None)] * k, method="highs")
    return res.x[:n], res.fun


@pytest.mark.parametrize("seed", range(5))
def test_lad_objective_matches_linear_program(seed):
    inst = make_reconstruction_instance(6, 48, seed=seed)
    noisy = corrupt_answers(inst.answers(), 0.1, seed=seed)
    est = LADReconstructor(n_iter=5000).fit(inst.queries, noisy)
    _, lp_obj = _lp_lad(inst.queries, inst.n * noisy)
    # subgradient descent is approximate; within 5% of the LP optimum
    assert est.objective_ <= lp_obj * 1.05 + 1e-3


def test_lad_is_an_sklearn_estimator():
    est = LADReconstructor(n_iter=500, trim=0.05)
    assert clone(est).get_params() == est.get_params()
    inst = make_reconstruction_instance(4, 64, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est.fit(inst.queries, inst.answers())
    np.testing.assert_allclose(est.predict(inst.queries), inst.answers(), atol=0.01)
    assert est.kept_.sum() == 64 - int(np.ceil(0.05 * 64))


def test_lad_warns_when_not_converged(monkeypatch):
    import sqgd.attacks as attacks

    real = attacks._lad_descent
    monkeypatch.setattr(attacks, "_lad_descent", lambda *a: real(*a)[:2] + (False,))
    inst = make_reconstruction_instance(4, 32, seed=0)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        est = LADReconstructor(n_iter=100).fit(inst.queries, inst.answers())
    assert not est.converged_ and est.coef_.shape == (4,)


def test_corrupt_answers_touches_requested_fraction():
    a = np.zeros(200)
    b = corrupt_answers(a, 0.05, seed=1)
    assert np.count_nonzero(b) == 10
    assert np.all(np.abs(b) <= 1)


# --------------------------------------------------------------------------
# composed analyst


def _subs(rng, d, n_x, T):
    subs = []
    for _ in range(d):
        D = FiniteDistribution(rng.dirichlet(np.ones(n_x)))
        base = rng.uniform(-1, 1, (T, n_x))
        subs.append(ReplayAnalyst(lambda ans, base=base: base[len(ans)] * (1.0 if not ans or ans[-1] >= 0 else -1.0), T, D))
    return subs


def test_product_query_population_value(rng):
    d, n_x, T = 4, 3, 2
    subs = _subs(rng, d, n_x, T)
    inst = make_reconstruction_instance(d, 32, seed=1)
    an = ComposedAnalyst(subs, inst, T)
    Qp = an.ask([])
    assert Qp.shape == (32, d * n_x)
    sub_q = np.array([s.ask([]) for s in subs])
    for j in range(32):
        brute = sum(inst.queries[j, i] * sub_q[i, x] * subs[i].distribution.p[x] / d for i in range(d) for x in range(n_x))
        assert Qp[j] @ an.distribution.p == pytest.approx(brute, abs=1e-14)


def test_composed_decodes_sub_answers(rng):
    d, n_x, T = 6, 4, 3
    subs = _subs(rng, d, n_x, T)
    inst = make_reconstruction_instance(d, 256, seed=3)
    an = ComposedAnalyst(subs, inst, T)
    tr = run_interaction(an, TruthfulOracle(an.distribution), an.distribution, 50, seed=0)
    decoded = an.sub_answers(list(tr.answers))
    for t in range(T):
        q = np.array([s.ask([float(r[i]) for r in decoded[:t]]) for i, s in enumerate(subs)])
        true = np.array([q[i] @ s.distribution.p for i, s in enumerate(subs)])
        assert np.abs(decoded[t] - true).max() < 0.1


def test_composed_rejects_mismatched_rows(rng):
    subs = _subs(rng, 3, 2, 2)
    with pytest.raises(ValueError, match="one sub-analyst per instance row"):
        ComposedAnalyst(subs, make_reconstruction_instance(4, 8), 2)
