"""Experiment runners behind the command-line subcommands.

Each ``cmd_*`` is a pure function of its configuration: trials are seeded
from the config seed and merged in seed order, whatever ``workers`` is.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from .. import __version__
from ..attacks import ComposedAnalyst, make_reconstruction_instance, run_pad_trial
from ..checks import convexity_gaps, gradient_norms, min_values
from ..convex import EmpiricalMeanFOOracle, NoisyFOOracle, SQFromFOReduction, TruthfulFOOracle, gd_rate_sweep, rate_bound
from ..gdsim import BooleanAnalystTree, HidingEmbedding, SimFunction, SimParams, SQOracleFromFOA, check_sim_accuracy, run_simulation
from ..sq import (
    EmpiricalMeanOracle,
    FiniteDistribution,
    FixedQueryAnalyst,
    GaussianNoiseOracle,
    ReplayAnalyst,
    SampleSplittingOracle,
    TruthfulOracle,
    boolean_wrap,
    bisection_probes,
    eval_batch_accuracy,
    run_interaction,
)
from .config import ExperimentConfig
from .results import ResultTable


def _map(fn, seeds, workers: int) -> list:
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def _table(cfg: ExperimentConfig, columns, seeds) -> ResultTable:
    return ResultTable(
        name=cfg.experiment,
        columns=columns,
        provenance={"config_sha256": cfg.sha256(), "seeds": list(seeds), "version": __version__, "config": cfg.to_dict() | {"out": None, "workers": None}},
    )


def _sim_params(p) -> SimParams:
    return SimParams(eta=p["eta"], eps=p["eps"], a=p["a"], c=p["c"], level_ratio=p["level_ratio"])


# --------------------------------------------------------------------------
# simulate


def _simulate_trial(seed: int, p: dict) -> list[dict]:
    tree = BooleanAnalystTree.random(p["T"], p["n"], seed=seed)
    D = tree.distribution
    if p["oracle"] == "truthful":
        oracle = TruthfulFOOracle(D)
    elif p["oracle"] == "noisy":
        oracle = NoisyFOOracle(TruthfulFOOracle(D), p["noise"])
    else:
        oracle = EmpiricalMeanFOOracle()
    tr = run_simulation(tree, oracle, params=_sim_params(p), m=p["m"], seed=seed, hiding=p["d"])
    verdicts = check_sim_accuracy(tr, p["eps"], p["margin"] * p["eps"])
    truth, _ = tree.ground_truth()
    rows = []
    for v in verdicts:
        t = v["t"]
        answer = tr.answers[t // 2 - 1] if t % 2 == 0 else None
        qv = tr.query_values[t // 2 - 1] if t % 2 == 0 else None
        rows.append(
            {
                "seed": seed,
                "t": t,
                "premise": v["premise"],
                "gradient_ok": v["gradient_ok"],
                "answer_ok": v["answer_ok"],
                "verdict": v["pass"],
                "answer": answer,
                "query_value": qv,
                "output_error": float(tr.output_errors[t - 1]),
                "table_error": float(tr.table_errors[t - 1]),
                "norm_w": float(tr.norms[t - 1]),
            }
        )
    return rows


def cmd_simulate(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    p = cfg.params
    seeds = cfg.trial_seeds()
    cols = ["seed", "t", "premise", "gradient_ok", "answer_ok", "verdict", "answer", "query_value", "output_error", "table_error", "norm_w"]
    table = _table(cfg, cols, seeds)
    for rows in _map(partial(_simulate_trial, p=p), seeds, cfg.workers):
        for r in rows:
            table.add(**r)
    table.predicates["all conditional verdicts pass"] = all(table.column("verdict"))
    table.predicates["iterates stay in the unit ball"] = max(table.column("norm_w")) <= 1.0 + 1e-12
    if p["oracle"] == "truthful":
        margin = p["margin"] * p["eps"]
        table.predicates["answers equal sign(q(D)) beyond the margin"] = all(
            r["answer"] == (1 if r["query_value"] >= 0 else -1) for r in table.rows if r["answer"] is not None and abs(r["query_value"]) > margin
        )
        table.predicates["access tables exact to 1e-9"] = max(table.column("table_error")) <= 1e-9
    return table


# --------------------------------------------------------------------------
# attack


def _sq_oracle(p):
    kind = p["oracle"]
    if kind == "empirical":
        return EmpiricalMeanOracle()
    if kind == "gaussian":
        return GaussianNoiseOracle(p["sigma"])
    if kind == "splitting":
        # one sample point per round, reused cyclically
        return SampleSplittingOracle(10**9)
    raise ValueError("the truthful oracle is built from the attack's distribution")


def _pad_trial(seed: int, p: dict, m: int) -> dict:
    if p["oracle"] == "truthful":
        from ..attacks import PadAttack
        from .._validation import spawn_seeds

        analyst_seed, run_seed = spawn_seeds(seed, 2)
        attack = PadAttack(m, p["gamma"], seed=analyst_seed, c=p["c"])
        tr = run_interaction(attack, TruthfulOracle(attack.distribution), attack.distribution, m, seed=run_seed)
        r = {
            "m": m,
            "T": tr.T,
            "fail_fraction": float(np.mean(tr.errors > p["err"])),
            "posthoc_fail_fraction": float(np.mean(tr.posthoc_gaps > p["err"])),
            **attack.summary(tr.sample),
        }
    else:
        r = run_pad_trial(m, _sq_oracle(p), seed, c=p["c"], gamma=p["gamma"], err=p["err"])
    return {"seed": seed, **r}


def _composed_trial(seed: int, p: dict) -> list[dict]:
    rng = np.random.default_rng(seed)
    d, n_x, T = p["n_rows"], p["n_x"], p["T"]
    subs, bases = [], []
    for i in range(d):
        D = FiniteDistribution(rng.dirichlet(np.ones(n_x)))
        base = rng.uniform(-1, 1, size=(T, n_x))
        # adaptive: the next query flips sign with the previous answer
        subs.append(ReplayAnalyst(lambda ans, base=base: base[len(ans)] * (1.0 if not ans or ans[-1] >= 0 else -1.0), T, D))
        bases.append(base)
    inst = make_reconstruction_instance(d, p["k"], seed)
    analyst = ComposedAnalyst(subs, inst, T)
    mix = analyst.distribution
    oracle = TruthfulOracle(mix) if p["oracle"] == "truthful" else _sq_oracle(p)
    tr = run_interaction(analyst, oracle, mix, 200, T, seed=seed)
    decoded = analyst.sub_answers(list(tr.answers))
    rows = []
    for t in range(T):
        sub_q = np.array([s.ask([float(r[i]) for r in decoded[:t]]) for i, s in enumerate(subs)])
        true_vals = np.array([sub_q[i] @ s.distribution.p for i, s in enumerate(subs)])
        rows.append(
            {
                "seed": seed,
                "round": t + 1,
                "decode_error": float(np.abs(decoded[t] - true_vals).max()),
                "batch_max_error": float(tr.errors[t].max()),
                "batch_accurate": bool(eval_batch_accuracy(_one_round(tr, t), p["err"], 0.0, 0.05)),
            }
        )
    return rows


def _one_round(tr, t):
    from ..sq import Transcript

    return Transcript([tr.rounds[t]], tr.m, 1, tr.k, tr.seed, tr.distribution, tr.sample)


def cmd_attack(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    p = cfg.params
    seeds = cfg.trial_seeds()
    if p["kind"] == "composed":
        table = _table(cfg, ["seed", "round", "decode_error", "batch_max_error", "batch_accurate"], seeds)
        for rows in _map(partial(_composed_trial, p=p), seeds, cfg.workers):
            for r in rows:
                table.add(**r)
        if p["oracle"] == "truthful":
            table.predicates["decoded sub-answers within 0.1 of q(D_i)"] = max(table.column("decode_error")) <= 0.1
        return table

    cols = ["seed", "m", "T", "fail_fraction", "posthoc_fail_fraction", "accused", "true_positives", "false_positives", "members"]
    table = _table(cfg, cols, seeds)
    ms = p["m"] if isinstance(p["m"], list) else [p["m"]]
    for m in ms:
        for r in _map(partial(_pad_trial, p=p, m=m), seeds, cfg.workers):
            table.add(**r)
    for m in ms:
        fracs = [r["fail_fraction"] for r in table.rows if r["m"] == m]
        if p["oracle"] == "truthful":
            table.predicates[f"m={m}: truthful oracle never errs"] = max(fracs) == 0.0
        else:
            wins = sum(f > p["target"] for f in fracs)
            table.predicates[f"m={m}: fail fraction > {p['target']} in at least half of trials"] = wins >= len(fracs) / 2
    return table


# --------------------------------------------------------------------------
# reduce


def _reduce_trial(seed: int, p: dict) -> dict:
    rng = np.random.default_rng(seed)
    k, T, n = p["k"], p["T"], p["n"]
    D = FiniteDistribution(rng.dirichlet(np.ones(n)))
    Q = rng.uniform(-1, 1, size=(T, k, n))
    analyst = FixedQueryAnalyst(Q, D)
    exact = run_interaction(analyst, SQFromFOReduction(TruthfulFOOracle(D), k, T), D, p["m"], seed=seed)
    noisy = run_interaction(analyst, SQFromFOReduction(NoisyFOOracle(TruthfulFOOracle(D), p["eps"]), k, T), D, p["m"], seed=seed)
    rms = np.sqrt(np.mean((noisy.answers - noisy.population) ** 2, axis=1))

    sim_T = p["sim_T"]
    tree = BooleanAnalystTree.random(sim_T, n, seed=seed)
    params = SimParams()
    foa = SQOracleFromFOA(TruthfulFOOracle(tree.distribution), sim_T, params, seed=seed)
    tr = run_interaction(tree.as_analyst(), foa, tree.distribution, p["m"], seed=seed)
    margin = 99 * params.eps
    vals = tr.population[:, 0]
    ok = all(a == (1 if v >= 0 else -1) for a, v in zip(tr.answers, vals) if abs(v) > margin)
    return {
        "seed": seed,
        "exact_max_error": float(np.abs(exact.answers - exact.population).max()),
        "noisy_max_rms": float(rms.max()),
        "foa_answers_correct": bool(ok),
        "foa_rounds": len(foa.outputs),
    }


def cmd_reduce(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    p = cfg.params
    seeds = cfg.trial_seeds()
    table = _table(cfg, ["seed", "exact_max_error", "noisy_max_rms", "foa_answers_correct", "foa_rounds"], seeds)
    for r in _map(partial(_reduce_trial, p=p), seeds, cfg.workers):
        table.add(**r)
    table.predicates["exact gradients decode to q(D) within 1e-9"] = max(table.column("exact_max_error")) <= 1e-9
    table.predicates["noisy per-round RMS answer error <= 2 eps"] = max(table.column("noisy_max_rms")) <= 2 * p["eps"] + 1e-12
    table.predicates["GD-simulated oracle answers correct beyond margin"] = all(table.column("foa_answers_correct"))
    return table


# --------------------------------------------------------------------------
# bias demo


def _bias_trial(seed: int, p: dict) -> dict:
    from ..convex import bias_demo

    gap, info = bias_demo(p["m"], p["d"], p["gamma"], p["mc_n"], seed=seed, norm_weight=p["norm_weight"])
    return {"seed": seed, "gap": gap, **{k: info[k] for k in ("positive_coordinates", "iff_holds", "step1_exact", "flagged")}}


def cmd_bias_demo(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    p = cfg.params
    seeds = cfg.trial_seeds()
    table = _table(cfg, ["seed", "gap", "positive_coordinates", "iff_holds", "step1_exact", "flagged"], seeds)
    for r in _map(partial(_bias_trial, p=p), seeds, cfg.workers):
        table.add(**r)
    gaps = table.column("gap")
    table.predicates[f"gap >= {p['threshold']} in at least half of trials"] = sum(g >= p["threshold"] for g in gaps) >= len(gaps) / 2
    table.predicates["step-1 gradient equals gamma * mean v_x exactly"] = all(table.column("step1_exact"))
    table.predicates["w2(i) > 0 iff coordinate i is 0 in every sample"] = all(table.column("iff_holds"))
    return table


# --------------------------------------------------------------------------
# gd rates


def _rate_cell(cell, n_seeds: int, seed: int) -> dict:
    eta, T, eps, noise = cell
    sub = gd_rate_sweep(eps, eta, T, noise, n_seeds, seed=[seed, int(T), int(round(eta * 1e6)), int(round(eps * 1e6)), len(noise)])
    return {"eta": eta, "T": T, "eps": eps, "noise": noise, "worst_suboptimality": float(sub.max()), "mean_suboptimality": float(sub.mean()), "bound": None}


def cmd_gd_rates(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    p = cfg.params
    cells = [(eta, T, eps, noise) for eta in p["eta"] for T in p["T"] for eps in p["eps"] for noise in p["noise"]]
    table = _table(cfg, ["eta", "T", "eps", "noise", "worst_suboptimality", "mean_suboptimality", "bound"], [cfg.seed])
    for r in _map(partial(_rate_cell, n_seeds=cfg.trials, seed=cfg.seed), cells, cfg.workers):
        r["bound"] = rate_bound(r["eta"], r["T"], r["eps"], p["C"])
        table.add(**r)
    table.predicates[f"F(w_S) - F* <= {p['C']} (eta + 1/(eta T) + eps) everywhere"] = all(r["worst_suboptimality"] <= r["bound"] for r in table.rows)
    table.predicates["bound is monotone in eps"] = all(
        a["bound"] <= b["bound"] for a in table.rows for b in table.rows if a["eta"] == b["eta"] and a["T"] == b["T"] and a["eps"] < b["eps"]
    )
    return table


# --------------------------------------------------------------------------
# verify


def cmd_verify(cfg: ExperimentConfig) -> ResultTable:
    """Fast invariant suite over every module."""
    cfg.validate()
    p = cfg.params
    table = _table(cfg, ["check", "passed", "value"], [cfg.seed])
    rng = np.random.default_rng(cfg.seed)
    n_samp = p["samples"]

    for T in range(1, p["T_max"] + 1):
        tree = BooleanAnalystTree.random(T, 6, seed=cfg.seed + T)
        f = SimFunction.build(tree, SimParams(), seed=cfg.seed)
        pts = np.arange(6)
        gap = float(convexity_gaps(f, n_samp, pts, seed=cfg.seed).max())
        table.add(check=f"sim T={T}: convexity slack <= 1e-9", passed=gap <= 1e-9, value=gap)
        g = float(gradient_norms(f, n_samp, pts, seed=cfg.seed).max())
        table.add(check=f"sim T={T}: gradient norm <= 4", passed=g <= 4 + 1e-9, value=g)
        lo = min_values(f, n_samp // 10, pts, seed=cfg.seed)
        table.add(check=f"sim T={T}: value >= c eta", passed=lo >= f.floor - 1e-15, value=lo)
        wrong = 0
        for s in range(10):
            tr_tree = BooleanAnalystTree.random(T, 6, seed=1000 * T + s)
            tr = run_simulation(tr_tree, TruthfulFOOracle(tr_tree.distribution), seed=s)
            wrong += not all(v["pass"] for v in check_sim_accuracy(tr, p["eps"], 99 * p["eps"]))
        table.add(check=f"sim T={T}: truthful verdicts pass on 10 trees", passed=wrong == 0, value=wrong)

    eps = 1 / 32
    worst = 0.0
    for _ in range(50):
        D = FiniteDistribution(rng.dirichlet(np.ones(5)))
        q = rng.uniform(-1, 1, 5)
        wrap = boolean_wrap(FixedQueryAnalyst(q[None, :], D), eps)
        answers = []
        for _ in range(bisection_probes(eps)):
            probe = wrap.ask(answers)
            answers.append(1.0 if probe @ D.p >= 0 else -1.0)
        worst = max(worst, abs(wrap.inner_answers(answers)[0] - q @ D.p))
    table.add(check="boolean wrap error <= 4 eps", passed=worst <= 4 * eps, value=worst)

    emb = HidingEmbedding.random(13, 1000, rng)
    u = rng.normal(size=13)
    rt = float(np.abs(emb.restrict(emb.lift(u)) - u).max())
    table.add(check="hiding round trip is exact", passed=rt == 0.0, value=rt)

    D = FiniteDistribution(rng.dirichlet(np.ones(7)))
    Q = rng.uniform(-1, 1, size=(3, 4, 7))
    tr = run_interaction(FixedQueryAnalyst(Q, D), SQFromFOReduction(TruthfulFOOracle(D), 4, 3), D, 10, seed=cfg.seed)
    err = float(np.abs(tr.answers - tr.population).max())
    table.add(check="quadratic reduction decodes exactly", passed=err <= 1e-9, value=err)

    table.predicates["all invariants hold"] = all(table.column("passed"))
    return table


COMMANDS = {
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "reduce": cmd_reduce,
    "bias-demo": cmd_bias_demo,
    "gd-rates": cmd_gd_rates,
    "verify": cmd_verify,
}


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return COMMANDS[cfg.experiment](cfg)
