"""Root-cause ranking on a causal DAG.

The DAG is reversed so that random-walk mass flows from effects towards
their causes, then personalized PageRank scores every node.  Dangling nodes
of the reversed graph (no causes of their own) get the larger
personalization weight.  Equal scores are ordered by access distance from the
trigger, farther first.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, UnknownNode
from .graphs import CausalGraph

SCORE_DECIMALS = 9


def reverse_graph(g: CausalGraph) -> CausalGraph:
    return CausalGraph(g.nodes, {(v, u) for u, v in g.edges},
                       {(v, u): s for (u, v), s in g.similarity.items()})


def dangling_nodes(g: CausalGraph) -> set[str]:
    """Nodes without outgoing edges in ``g`` (pass the reversed graph)."""
    has_out = {u for u, _ in g.edges}
    return {n for n in g.nodes if n not in has_out}


def personalization_vector(g: CausalGraph, p_dangling: float = 1.0, p_other: float = 0.5) -> np.ndarray:
    """Normalized weights in ``g.nodes`` order."""
    if p_dangling <= 0 or p_other <= 0:
        raise ValueError("personalization weights must be positive")
    dangling = dangling_nodes(g)
    raw = np.array([p_dangling if n in dangling else p_other for n in g.nodes], dtype=np.float64)
    return raw / raw.sum()


def personalized_pagerank(g: CausalGraph, personalization: np.ndarray, damping: float = 0.85,
                          tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Scores in ``g.nodes`` order.

    Fixed point of ``s = (1-d) p + d (W s + (dangling mass) p)`` where W
    spreads each node's score uniformly over its out-edges.  Iterates until
    the L1 change drops below ``tol``.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    n = len(g.nodes)
    p = np.asarray(personalization, dtype=np.float64)
    if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("personalization must be a non-negative vector summing to 1")
    index = {name: i for i, name in enumerate(g.nodes)}
    src = np.array([index[u] for u, _ in g.edges], dtype=np.intp)
    dst = np.array([index[v] for _, v in g.edges], dtype=np.intp)
    out_deg = np.bincount(src, minlength=n).astype(np.float64)
    dangling = out_deg == 0
    share = np.zeros(len(src)) if len(src) == 0 else 1.0 / out_deg[src]

    s = p.copy()
    residual = np.inf
    for _ in range(max_iter):
        walk = np.zeros(n)
        np.add.at(walk, dst, s[src] * share)
        nxt = damping * (walk + s[dangling].sum() * p) + (1.0 - damping) * p
        nxt /= nxt.sum()
        residual = np.abs(nxt - s).sum()
        s = nxt
        if residual < tol:
            return s
    raise ConvergenceError(residual, max_iter)


def access_distance(g: CausalGraph, trigger: str) -> dict[str, int]:
    """Hop count from ``trigger`` along the edges of ``g``; 0 when unreachable."""
    if trigger not in g.nodes:
        raise UnknownNode(trigger)
    adj: dict[str, list[str]] = {n: [] for n in g.nodes}
    for u, v in sorted(g.edges):
        adj[u].append(v)
    dist = {trigger: 0}
    queue = deque([trigger])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return {n: dist.get(n, 0) for n in g.nodes}


@dataclass
class RankedCause:
    node: str
    score: float
    ad: int

    def to_json(self) -> dict:
        return {"node": self.node, "score": self.score, "ad": self.ad}


@dataclass
class RootCauseRanking:
    trigger: str
    ranking: list[RankedCause] = field(default_factory=list)

    @property
    def nodes(self) -> list[str]:
        return [r.node for r in self.ranking]

    def rank_of(self, node: str) -> int | None:
        """1-based position of ``node``; None when it was not ranked."""
        for i, r in enumerate(self.ranking, start=1):
            if r.node == node:
                return i
        return None

    def to_json(self, provenance: dict | None = None) -> dict:
        doc = {"trigger": self.trigger, "ranking": [r.to_json() for r in self.ranking]}
        if provenance is not None:
            doc["provenance"] = provenance
        return doc

    def table(self) -> str:
        width = max([4] + [len(r.node) for r in self.ranking])
        lines = [f"trigger: {self.trigger}", f"{'rank':>4}  {'node':<{width}}  {'score':>12}  {'ad':>3}"]
        for i, r in enumerate(self.ranking, start=1):
            lines.append(f"{i:>4}  {r.node:<{width}}  {r.score:>12.9f}  {r.ad:>3}")
        return "\n".join(lines)


def order_candidates(scores: dict[str, float], ad: dict[str, int]) -> list[str]:
    """Score desc (rounded to 1e-9), then access distance desc, then name asc."""
    return sorted(scores, key=lambda n: (-round(scores[n], SCORE_DECIMALS), -ad[n], n))


def rank_root_causes(g: CausalGraph, trigger: str, k: int = 5, damping: float = 0.85,
                     p_dangling: float = 1.0, p_other: float = 0.5,
                     include_trigger: bool = False, scope: str = "graph") -> RootCauseRanking:
    """Top-``k`` root-cause candidates for ``trigger`` on the causal DAG ``g``.

    ``scope="graph"`` runs PageRank on the whole reversed graph.
    ``scope="ancestors"`` restricts the walk to the trigger and the nodes it
    can reach in the reversed graph (its causal ancestors); other nodes keep
    a zero score and are ranked after them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if trigger not in g.nodes:
        raise UnknownNode(trigger)
    if scope not in ("graph", "ancestors"):
        raise ValueError(f"unknown scope {scope!r}")
    rev = reverse_graph(g)
    ad = access_distance(rev, trigger)
    if scope == "ancestors":
        keep = {n for n in rev.nodes if n == trigger or ad[n] > 0}
        walk_graph = CausalGraph(tuple(n for n in rev.nodes if n in keep),
                                 {(u, v) for u, v in rev.edges if u in keep and v in keep})
    else:
        walk_graph = rev
    p = personalization_vector(walk_graph, p_dangling, p_other)
    pr = personalized_pagerank(walk_graph, p, damping)
    scores = {n: 0.0 for n in g.nodes}
    scores.update({n: float(s) for n, s in zip(walk_graph.nodes, pr)})
    ordered = order_candidates(scores, ad)
    if not include_trigger:
        ordered = [n for n in ordered if n != trigger]
    return RootCauseRanking(trigger, [RankedCause(n, scores[n], ad[n]) for n in ordered[:k]])
