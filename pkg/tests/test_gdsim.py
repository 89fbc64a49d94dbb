import json

import numpy as np
import pytest
from sklearn.base import clone

from sqgd.checks import convexity_gaps, finite_difference_errors, gradient_norms, min_values
from sqgd.convex import EmpiricalMeanFOOracle, FOOracle, NoisyFOOracle, TruthfulFOOracle
from sqgd.gdsim import (
    BooleanAnalystTree,
    GDSimulator,
    HidingEmbedding,
    OverviewFunction,
    SimFunction,
    SimParams,
    apply_hiding,
    check_sim_accuracy,
    kappa,
    leakage_trial,
    node_coords,
    overview_trajectory,
    regime_report,
    rho,
    run_simulation,
    sim_dim,
    sq_oracle_from_foa,
)
from sqgd.gdsim.tree import all_paths
from sqgd.sq import FiniteDistribution, ReplayAnalyst, run_interaction


def _sign(v):
    return 1 if v >= 0 else -1


# --------------------------------------------------------------------------
# trees


def test_tree_sizes_and_paths():
    tree = BooleanAnalystTree.random(3, 4, seed=1)
    assert len(tree) == 7 and len(tree.leaves()) == 8
    assert list(all_paths(2)) == [(), (1,), (-1,)]


def test_tree_json_round_trip():
    tree = BooleanAnalystTree.random(3, 4, seed=1)
    back = BooleanAnalystTree.from_json(tree.to_json())
    for p in all_paths(3):
        np.testing.assert_array_equal(back.query(p), tree.query(p))
    np.testing.assert_array_equal(back.distribution.p, tree.distribution.p)


def test_tree_from_analyst_and_back():
    D = FiniteDistribution.uniform(3)
    an = ReplayAnalyst(lambda ans: np.full(3, 0.1 * (1 + sum(ans))), 2, D, boolean=True)
    tree = BooleanAnalystTree.from_analyst(an)
    np.testing.assert_allclose(tree.query((-1,)), 0.0)
    np.testing.assert_allclose(tree.as_analyst().ask([0.3]), tree.query((1,)))


def test_follow_forces_every_leaf():
    tree = BooleanAnalystTree.random(3, 5, seed=4)
    for leaf in tree.leaves():
        path, _ = tree.follow(leaf).ground_truth()
        assert tuple(path) == leaf


def test_wrong_tree_shape_rejected():
    with pytest.raises(ValueError, match="exactly 3 nodes"):
        BooleanAnalystTree({(): np.zeros(2)}, 2)


# --------------------------------------------------------------------------
# function


@pytest.mark.parametrize("T,dim", [(1, 5), (2, 13), (3, 29), (4, 61)])
def test_dimension(T, dim):
    assert sim_dim(T) == dim


def test_node_coordinates_are_nested():
    np.testing.assert_array_equal(node_coords(2, ()), [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(node_coords(2, (1,)), [3, 5, 7, 9, 11])
    np.testing.assert_array_equal(node_coords(2, (-1,)), [4, 6, 8, 10, 12])
    # every node owns coordinates 1 and 2 exclusively
    T = 4
    owned = np.concatenate([node_coords(T, p)[1:3] for p in all_paths(T)])
    assert len(set(owned.tolist())) == owned.size


def test_depth_one_at_start():
    tree = BooleanAnalystTree.random(1, 4, seed=0)
    f = SimFunction.build(tree)
    eta, a = f.params.eta, f.params.a
    w = f.initial_point()
    for x in range(4):
        info = f(w, x)
        q = tree.query(())[x]
        assert info.value == pytest.approx(eta)
        np.testing.assert_allclose(info.gradient, [1, -a * (1 + q), -a * (1 - q), 0, 0])


def _brute_first_order(f, w, x):
    """Max over explicitly listed pieces, first maximizer wins."""
    cands = []
    for nd in f.nodes:
        v, g = nd.h1(w, [x])
        cands.append((v[0], g[0]))
        c = nd.coords
        ga = np.zeros(f.dim)
        ga[[c[1], c[2], c[3]]] = [2 + nd.xi2, 1, -1]
        cands.append(((2 + nd.xi2) * w[c[1]] + w[c[2]] - w[c[3]], ga))
        gb = np.zeros(f.dim)
        gb[[c[2], c[1], c[4]]] = [2 + nd.xi3, 1, -1]
        cands.append(((2 + nd.xi3) * w[c[2]] + w[c[1]] - w[c[4]], gb))
    cands.append((f.floor, np.zeros(f.dim)))
    best = max(range(len(cands)), key=lambda i: (cands[i][0], -i))
    return cands[best]


@pytest.mark.parametrize("T", [1, 2, 3])
def test_first_order_matches_brute_force(T):
    tree = BooleanAnalystTree.random(T, 5, seed=T)
    f = SimFunction.build(tree)
    rng = np.random.default_rng(T)
    for _ in range(100):
        w = rng.normal(size=f.dim) * rng.choice([1e-3, 0.1])
        x = int(rng.integers(5))
        v, g = f.first_order(w, [x])
        bv, bg = _brute_first_order(f, w, x)
        assert v[0] == pytest.approx(bv, abs=1e-15)
        np.testing.assert_array_equal(g[0], bg)


def test_floor_wins_ties_last_and_is_reached():
    f = SimFunction.build(BooleanAnalystTree.random(2, 3, seed=0))
    v, g = f.first_order(np.zeros(f.dim), np.arange(3))
    np.testing.assert_allclose(v, f.floor)
    assert np.all(g == 0)


@pytest.mark.parametrize("T", [1, 2, 3, 4])
def test_convex_lipschitz_floor_and_gradients(T):
    f = SimFunction.build(BooleanAnalystTree.random(T, 6, seed=10 + T))
    pts = np.arange(6)
    assert convexity_gaps(f, 2000, pts, seed=T).max() <= 1e-9
    assert gradient_norms(f, 500, pts, seed=T).max() <= 4 + 1e-9
    assert min_values(f, 200, pts, seed=T) >= f.floor
    assert finite_difference_errors(f, 30, pts, seed=T).max() < 1e-5


def test_param_constraints_named():
    with pytest.raises(ValueError, match="0 < a <= 1/16"):
        SimParams(a=0.1).validate(2)
    with pytest.raises(ValueError, match="3\\*a_top - 12\\*eps"):
        SimParams(c=1.0).validate(2)
    with pytest.raises(ValueError, match="level_ratio > 4/3"):
        SimParams(level_ratio=1.2).validate(2)
    assert SimParams().validate(4)


def test_regime_report_keys():
    assert regime_report(3, SimParams()) == {"eta < sqrt(eps/48)": True, "T < 1/(4 eta)": True, "T < 1/(24 eps)": True}
    assert not regime_report(3, SimParams(eta=0.1))["T < 1/(4 eta)"]


def test_overview_second_gradient_reveals_next_query():
    D = FiniteDistribution(np.array([0.2, 0.3, 0.5]))
    q = np.array([-1.0, -0.5, 0.1])  # q(D) < 0
    qp, qm = np.array([0.3, -0.4, 0.9]), np.array([1.0, 1.0, -1.0])
    f = OverviewFunction(q, qp, qm, 0.01, D)
    _, G = overview_trajectory(f)
    np.testing.assert_allclose(G[1], [0, 1, 0, qp @ D.p, 0])
    f2 = OverviewFunction(-q, qp, qm, 0.01, D)
    np.testing.assert_allclose(overview_trajectory(f2)[1][1], [0, 0, 1, 0, qm @ D.p])


# --------------------------------------------------------------------------
# rho and kappa


def test_rho_prefix_length_enforced():
    f = SimFunction.build(BooleanAnalystTree.random(2, 3, seed=0))
    with pytest.raises(ValueError, match="prefix of length 1"):
        rho(f, 3, (), f.initial_point(), [0])
    v, g = rho(f, 3, (1,), f.initial_point(), [0, 1])
    assert v.shape == (2,) and g.shape == (2, f.dim)


def test_kappa_threshold_is_strict():
    f = SimFunction.build(BooleanAnalystTree.random(1, 3, seed=0))
    out = np.zeros((2, 5))
    out[1, 3] = -0.5
    assert kappa(f, 1, out) == -1
    out[1, 3] = np.nextafter(-0.5, -1)
    assert kappa(f, 1, out) == 1
    with pytest.raises(ValueError):
        kappa(f, 2, out)


def test_kappa_follows_answer_path():
    f = SimFunction.build(BooleanAnalystTree.random(2, 3, seed=0))
    out = np.zeros((4, f.dim))
    out[1, node_coords(2, ())[3]] = -1.0  # answer 1 = +1
    out[3, node_coords(2, (1,))[3]] = -1.0  # answer 2 at node (+1,) = +1
    assert kappa(f, 2, out) == 1
    out[1, node_coords(2, ())[3]] = 0.0
    assert kappa(f, 2, out) == -1


# --------------------------------------------------------------------------
# simulation


@pytest.mark.parametrize("T", [1, 2, 3, 4])
def test_truthful_simulation_answers_every_leaf(T):
    base = BooleanAnalystTree.random(T, 6, seed=100 + T)
    margin = 99 * SimParams().eps
    for leaf in base.leaves():
        tree = base.follow(leaf)
        tr = run_simulation(tree, TruthfulFOOracle(tree.distribution), seed=T)
        truth, values = tree.ground_truth()
        for a, t, v in zip(tr.answers, truth, values):
            if abs(v) > margin:
                assert a == t
        assert tr.table_errors.max() <= 1e-9
        assert not tr.projected.any()
        assert all(v["pass"] for v in check_sim_accuracy(tr, SimParams().eps, margin))


def test_population_gradients_recomputed_by_hand():
    tree = BooleanAnalystTree.random(2, 5, seed=3)
    tr = run_simulation(tree, TruthfulFOOracle(tree.distribution), seed=0)
    f = tr.extra["function"]
    for t in range(4):
        w = tr.trajectory[t]
        brute = sum(tree.distribution.p[x] * _brute_first_order(f, w, x)[1] for x in range(5))
        np.testing.assert_allclose(tr.population_gradients[t], brute, atol=1e-15)
        np.testing.assert_allclose(tr.outputs[t], brute, atol=1e-12)


def test_noisy_simulation_passes_checks():
    eps = SimParams().eps
    for s in range(10):
        tree = BooleanAnalystTree.random(3, 6, seed=s)
        tr = run_simulation(tree, NoisyFOOracle(TruthfulFOOracle(tree.distribution), eps), seed=s)
        assert tr.output_errors.max() <= eps + 1e-12
        assert all(v["pass"] for v in check_sim_accuracy(tr, eps, 99 * eps))


def test_verdicts_are_vacuous_after_a_bad_round():
    tree = BooleanAnalystTree.random(2, 4, seed=1)
    tr = run_simulation(tree, TruthfulFOOracle(tree.distribution), seed=0)
    tr.outputs[0] += 1.0
    v = check_sim_accuracy(tr, 1e-3, 0.25)
    assert v[0]["premise"] and v[0]["answer_ok"] is None
    assert all(not r["premise"] and r["pass"] for r in v[1:])


class _Shove(FOOracle):
    def estimate(self, w, access, t):
        g = np.zeros(w.size)
        g[0] = -1e6
        return g


def test_projection_in_regime_raises():
    tree = BooleanAnalystTree.random(1, 3, seed=0)
    with pytest.raises(RuntimeError, match="projection"):
        run_simulation(tree, _Shove(), seed=0)


def test_simulation_rerun_is_identical():
    tree = BooleanAnalystTree.random(3, 5, seed=8)
    a = run_simulation(tree, EmpiricalMeanFOOracle(), seed=4, hiding=200)
    b = run_simulation(tree, EmpiricalMeanFOOracle(), seed=4, hiding=200)
    assert a.to_json(0.01, 0.25) == b.to_json(0.01, 0.25)
    assert "verdicts" in json.loads(a.to_json(0.01, 0.25))


def test_hiding_only_relabels_coordinates():
    tree = BooleanAnalystTree.random(2, 5, seed=2)
    plain = run_simulation(tree, TruthfulFOOracle(tree.distribution), seed=1)
    emb = HidingEmbedding.random(sim_dim(2), 100, seed=5)
    hidden = run_simulation(tree, TruthfulFOOracle(tree.distribution), seed=1, hiding=emb)
    assert hidden.answers == plain.answers
    np.testing.assert_allclose(np.array([emb.restrict(w) for w in hidden.trajectory]), plain.trajectory, atol=1e-15)
    np.testing.assert_allclose(hidden.trajectory[:, np.setdiff1d(np.arange(100), emb.perm)], 0.0)


def test_gd_simulator_estimator():
    tree = BooleanAnalystTree.random(2, 5, seed=6)
    est = GDSimulator(hiding_dim=40)
    assert clone(est).get_params() == est.get_params()
    est.fit(tree, TruthfulFOOracle(tree.distribution))
    assert est.score(tree) == 1.0
    assert all(v["pass"] for v in est.verdicts_)


# --------------------------------------------------------------------------
# hiding


def test_embedding_pins_first_coordinate_and_round_trips(rng):
    emb = HidingEmbedding.random(13, 500, seed=rng)
    assert emb.perm[0] == 0 and len(set(emb.perm.tolist())) == 13
    u = rng.normal(size=13)
    np.testing.assert_array_equal(emb.restrict(emb.lift(u)), u)
    assert np.linalg.norm(emb.lift(u)) == pytest.approx(np.linalg.norm(u))
    assert HidingEmbedding.identity(13).is_identity


def test_hidden_function_matches_original(rng):
    f = SimFunction.build(BooleanAnalystTree.random(2, 4, seed=0))
    emb = HidingEmbedding.random(f.dim, 40, seed=1)
    h = apply_hiding(f, emb)
    u = rng.normal(size=f.dim) * 0.05
    v1, g1 = f.first_order(u, np.arange(4))
    v2, g2 = h.first_order(emb.lift(u), np.arange(4))
    np.testing.assert_allclose(v1, v2)
    np.testing.assert_allclose(g2, np.array([emb.lift(g) for g in g1]))


def test_leakage_mean_is_slice_share():
    d, dim = 200, 13
    v = np.zeros(d)
    v[1:] = 1.0
    draws = leakage_trial(d, v, range(1, 5), 3000, dim, seed=0)
    expected = 4 / (d - 1) * np.sum(v[1:] ** 2)
    assert abs(draws.mean() - expected) <= 3 * draws.std(ddof=1) / np.sqrt(draws.size)


# --------------------------------------------------------------------------
# statistical queries through GD


def test_sq_oracle_from_truthful_foa():
    tree = BooleanAnalystTree.random(3, 6, seed=21)
    foa = sq_oracle_from_foa(TruthfulFOOracle(tree.distribution), T=3, seed=0)
    tr = run_interaction(tree.as_analyst(), foa, tree.distribution, 30, seed=0)
    truth, values = tree.ground_truth()
    for a, t, v in zip(tr.answers[:, 0], truth, values):
        if abs(v) > 99 / 400:
            assert a == t
    assert len(foa.outputs) == 6
    with pytest.raises(ValueError, match="exhausted"):
        foa.answer(tree.query(()), 3)


def test_sq_oracle_from_empirical_foa_posthoc_recount():
    tree = BooleanAnalystTree.random(2, 6, seed=3)
    foa = sq_oracle_from_foa(EmpiricalMeanFOOracle(), T=2, seed=1)
    run_interaction(tree.as_analyst(), foa, tree.distribution, 10, seed=2)
    run = foa.to_gd_run(tree.distribution)
    idx = foa.sample.indices
    for (vals, grads), pop, emp in zip(foa.tables, run.population_gradients, run.empirical_gradients):
        np.testing.assert_array_equal(emp, sum(grads[x] for x in idx) / len(idx))
        np.testing.assert_allclose(pop, sum(tree.distribution.p[x] * grads[x] for x in range(6)), atol=1e-15)
    np.testing.assert_array_equal(run.estimates, run.empirical_gradients)
