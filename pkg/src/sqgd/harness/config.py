"""Experiment configuration with per-experiment defaults and constraint checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

EXPERIMENTS = ("simulate", "attack", "reduce", "bias-demo", "gd-rates", "verify")

DEFAULTS: dict[str, dict] = {
    "simulate": {
        "T": 3,
        "n": 6,
        "m": 50,
        "eta": 1 / 800,
        "eps": 1 / 400,
        "a": 1 / 16,
        "c": None,
        "level_ratio": 1.5,
        "oracle": "truthful",
        "noise": 1 / 400,
        "d": None,
        "margin": 99.0,
    },
    "attack": {
        "kind": "pad",
        "m": [8, 16],
        "c": 4.0,
        "gamma": 0.25,
        "oracle": "empirical",
        "sigma": 0.05,
        "err": 0.01,
        "target": 0.25,
        "n_rows": 8,
        "k": 256,
        "T": 4,
        "n_x": 5,
    },
    "reduce": {
        "k": 16,
        "T": 8,
        "n": 10,
        "m": 50,
        "eps": 0.01,
        "sim_T": 3,
    },
    "bias-demo": {
        "m": 12,
        "d": 2**16,
        "gamma": None,
        "mc_n": 100_000,
        "norm_weight": 0.5,
        "threshold": 0.5,
    },
    "gd-rates": {
        "eta": [1e-3, 1e-2, 1e-1],
        "T": [100, 1000, 10000],
        "eps": [0.0, 1e-2],
        "noise": ["sphere", "against"],
        "C": 10.0,
    },
    "verify": {
        "T_max": 4,
        "eps": 1 / 400,
        "samples": 2000,
    },
}

DEFAULT_TRIALS = {"simulate": 100, "attack": 20, "reduce": 100, "bias-demo": 20, "gd-rates": 100, "verify": 1}


class ConfigError(ValueError):
    """A configuration violates a documented constraint; the message names it."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    trials: int | None = None
    workers: int = 1
    out: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose one of {', '.join(EXPERIMENTS)}")
        merged = copy.deepcopy(DEFAULTS[self.experiment])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameter(s) for {self.experiment}: {', '.join(sorted(unknown))}")
        merged.update(self.params)
        self.params = merged
        if self.trials is None:
            self.trials = DEFAULT_TRIALS[self.experiment]

    def __getitem__(self, key):
        return self.params[key]

    def trial_seeds(self) -> list[int]:
        return [int(s) for s in np.random.SeedSequence(self.seed).generate_state(self.trials)]

    def validate(self) -> "ExperimentConfig":
        _check(self.seed >= 0, "seed >= 0")
        _check(self.trials >= 1, "trials >= 1")
        _check(self.workers >= 1, "workers >= 1")
        VALIDATORS[self.experiment](self.params)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def sha256(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        data = self.to_dict()
        data.pop("out")
        data.pop("workers")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def _check(ok: bool, constraint: str, detail: str = ""):
    if not ok:
        raise ConfigError(f"constraint violated: {constraint}" + (f" ({detail})" if detail else ""))


def _validate_simulate(p):
    from ..gdsim import SimParams

    _check(p["T"] >= 1, "T >= 1", f"T={p['T']}")
    _check(p["n"] >= 1, "n >= 1")
    _check(p["m"] >= 1, "m >= 1")
    _check(p["oracle"] in ("truthful", "noisy", "empirical"), "oracle in {truthful, noisy, empirical}", repr(p["oracle"]))
    _check(p["noise"] >= 0, "noise >= 0")
    dim = 4 * 2 ** p["T"] - 3
    _check(p["d"] is None or p["d"] >= dim, "d >= 4*2^T - 3", f"d={p['d']}, dim={dim}")
    try:
        SimParams(eta=p["eta"], eps=p["eps"], a=p["a"], c=p["c"], level_ratio=p["level_ratio"]).validate(p["T"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _validate_attack(p):
    _check(p["kind"] in ("pad", "composed"), "kind in {pad, composed}", repr(p["kind"]))
    _check(p["oracle"] in ("empirical", "truthful", "gaussian", "splitting"), "oracle in {empirical, truthful, gaussian, splitting}", repr(p["oracle"]))
    ms = p["m"] if isinstance(p["m"], list) else [p["m"]]
    _check(all(m >= 2 for m in ms), "m >= 2", f"m={p['m']}")
    _check(p["gamma"] < 0.5, "gamma < 1/2", f"gamma={p['gamma']}")
    _check(p["c"] > 0, "c > 0")
    _check(p["err"] > 0, "err > 0")
    _check(p["k"] >= p["n_rows"], "k >= n_rows", f"k={p['k']}, n_rows={p['n_rows']}")


def _validate_reduce(p):
    _check(p["k"] >= 1 and p["T"] >= 1, "k >= 1 and T >= 1")
    _check(p["eps"] >= 0, "eps >= 0")
    _check(p["n"] >= 1 and p["m"] >= 1, "n >= 1 and m >= 1")
    _check(p["sim_T"] >= 1, "sim_T >= 1")


def _validate_bias(p):
    _check(p["m"] >= 1, "m >= 1")
    _check(p["d"] >= 2 ** p["m"], "d >= 2^m", f"d={p['d']}, m={p['m']}")
    _check(p["mc_n"] >= 1, "mc_n >= 1")
    g = p["gamma"] if p["gamma"] is not None else 1 / (2 * np.sqrt(p["d"]))
    _check(p["norm_weight"] + g * np.sqrt(p["d"]) <= 1 + 1e-12, "norm_weight + gamma*sqrt(d) <= 1 (1-Lipschitz)")


def _validate_rates(p):
    _check(all(e > 0 for e in p["eta"]), "eta > 0")
    _check(all(T >= 1 for T in p["T"]), "T >= 1")
    _check(all(e >= 0 for e in p["eps"]), "eps >= 0")
    _check(all(n in ("sphere", "ball", "against") for n in p["noise"]), "noise in {sphere, ball, against}")


def _validate_verify(p):
    _check(1 <= p["T_max"] <= 6, "1 <= T_max <= 6")
    _check(p["samples"] >= 10, "samples >= 10")


VALIDATORS = {
    "simulate": _validate_simulate,
    "attack": _validate_attack,
    "reduce": _validate_reduce,
    "bias-demo": _validate_bias,
    "gd-rates": _validate_rates,
    "verify": _validate_verify,
}
