"""Boolean analysts materialized as complete binary trees of queries."""

from __future__ import annotations

import itertools
import json

import numpy as np

from .._validation import check_query, check_rng, path_seed, sign
from ..sq import Analyst, FiniteDistribution, ReplayAnalyst

Path = tuple[int, ...]


def all_paths(depth: int):
    """Every sign prefix of length < depth, in breadth-first order."""
    for k in range(depth):
        yield from itertools.product((1, -1), repeat=k)


class BooleanAnalystTree:
    """Query at every sign prefix of a depth-``T`` Boolean analyst.

    ``queries[path]`` is the table the analyst asks after seeing the answer
    signs ``path``; the tree has ``2^T - 1`` nodes.
    """

    def __init__(self, queries: dict, depth: int, distribution: FiniteDistribution | None = None):
        self.depth = int(depth)
        if self.depth < 1:
            raise ValueError("tree depth must be at least 1")
        expected = set(all_paths(self.depth))
        queries = {tuple(int(s) for s in k): v for k, v in queries.items()}
        if set(queries) != expected:
            raise ValueError(f"a depth-{self.depth} tree needs exactly {len(expected)} nodes")
        n = len(next(iter(queries.values())))
        self.queries = {k: check_query(v, n, name=f"query at {k}") for k, v in queries.items()}
        self.n = n
        self.distribution = distribution
        if distribution is not None and distribution.n != n:
            raise ValueError("tree queries and distribution disagree on the domain size")

    @classmethod
    def random(cls, depth: int, n: int, seed=0, distribution: FiniteDistribution | None = None, extreme: bool = False) -> "BooleanAnalystTree":
        """Uniform queries on every node; ``extreme`` draws +-1 entries instead.

        Node queries are keyed by ``(seed, path)``, so trees of different
        depth with the same seed share their top levels.
        """
        queries = {}
        for path in all_paths(depth):
            rng = check_rng(path_seed(seed, path))
            queries[path] = rng.choice([-1.0, 1.0], size=n) if extreme else rng.uniform(-1.0, 1.0, size=n)
        if distribution is None:
            distribution = FiniteDistribution.random(n, check_rng(path_seed(seed, (0,) * (depth + 1))))
        return cls(queries, depth, distribution)

    @classmethod
    def from_analyst(cls, analyst: Analyst, depth: int | None = None) -> "BooleanAnalystTree":
        """Enumerate both answers at every level of a Boolean analyst."""
        if not analyst.boolean:
            raise ValueError("only Boolean analysts can be materialized as trees")
        depth = analyst.horizon if depth is None else int(depth)
        queries = {path: np.asarray(analyst.ask([float(s) for s in path]), dtype=float) for path in all_paths(depth)}
        return cls(queries, depth, analyst.distribution)

    def __len__(self) -> int:
        return len(self.queries)

    def query(self, path) -> np.ndarray:
        return self.queries[tuple(path)]

    def leaves(self):
        return list(itertools.product((1, -1), repeat=self.depth))

    def ground_truth(self, distribution: FiniteDistribution | None = None) -> tuple[list[int], list[float]]:
        """Answer path ``sign(q_t(D))`` and the population values along it."""
        D = self.distribution if distribution is None else distribution
        path: list[int] = []
        values = []
        for _ in range(self.depth):
            v = float(self.query(path) @ D.p)
            values.append(v)
            path.append(int(sign(v)))
        return path, values

    def follow(self, path) -> "BooleanAnalystTree":
        """Flip node queries so ``sign(q(D))`` traces ``path``."""
        D = self.distribution
        queries = dict(self.queries)
        for k in range(self.depth):
            prefix = tuple(path[:k])
            if sign(queries[prefix] @ D.p) != path[k]:
                queries[prefix] = -queries[prefix]
        return BooleanAnalystTree(queries, self.depth, D)

    def as_analyst(self) -> Analyst:
        def strategy(answers):
            return self.query(tuple(int(s) for s in sign(answers))) if answers else self.query(())

        return ReplayAnalyst(strategy, self.depth, self.distribution, boolean=True)

    def to_dict(self) -> dict:
        def node(path):
            out = {"query": self.query(path).tolist()}
            if len(path) + 1 < self.depth:
                out["plus"] = node(path + (1,))
                out["minus"] = node(path + (-1,))
            return out

        return {
            "depth": self.depth,
            "distribution": None if self.distribution is None else self.distribution.p.tolist(),
            "root": node(()),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BooleanAnalystTree":
        data = json.loads(text)
        queries = {}

        def walk(node, path):
            queries[path] = np.asarray(node["query"], dtype=float)
            if "plus" in node:
                walk(node["plus"], path + (1,))
                walk(node["minus"], path + (-1,))

        walk(data["root"], ())
        dist = None if data["distribution"] is None else FiniteDistribution(data["distribution"])
        return cls(queries, data["depth"], dist)
