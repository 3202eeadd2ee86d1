"""Synthetic fault cases: random DAG, discrete CPTs, one injected root cause.

Each node takes one of ``cardinality`` states.  A node's state at timestamp
t is drawn from its conditional probability table given its parents' states
at t-1, so influence travels along DAG edges with a one-step lag.  CPT rows
are Dirichlet draws, sampled lazily per parent configuration from a seed
derived from (case seed, node, table version, configuration), which makes
the table for a node with many parents well defined without materializing
it.  The anomalous segment re-draws the root cause's whole table, biased
towards one fault state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import detect_trigger
from .graphs import CausalGraph
from .series import SeriesMatrix


# trailing mean applied before scoring discrete states for the trigger
DETECT_SMOOTHING = 50


def node_names(n: int) -> tuple[str, ...]:
    return tuple(f"X{i + 1}" for i in range(n))


def generate_dag(n: int, density: float, rng: np.random.Generator, max_tries: int = 1000) -> CausalGraph:
    """Random weakly connected DAG over ``n`` nodes.

    Nodes are put in a uniformly random order and every forward pair is
    joined with probability ``density``; disconnected draws are rejected.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    names = node_names(n)
    for _ in range(max_tries):
        order = rng.permutation(n)
        edges = set()
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < density:
                    edges.add((names[order[a]], names[order[b]]))
        g = CausalGraph(names, edges)
        if _weakly_connected(g):
            return g
    raise RuntimeError(f"no weakly connected DAG after {max_tries} draws (n={n}, density={density})")


def _weakly_connected(g: CausalGraph) -> bool:
    adj = {n: set() for n in g.nodes}
    for u, v in g.edges:
        adj[u].add(v)
        adj[v].add(u)
    seen, stack = {g.nodes[0]}, [g.nodes[0]]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(g.nodes)


class LazyCPT:
    """Conditional probability table of one node, rows drawn on first use."""

    def __init__(self, seed: int, node: int, version: int, n_parents: int,
                 cardinality: int = 4, concentration: float = 1.0, prior: np.ndarray | None = None):
        self.key = (seed, node, version)
        self.n_parents = n_parents
        self.cardinality = cardinality
        self.concentration = concentration
        # Dirichlet parameters of every row; symmetric unless a prior is given
        self.prior = np.full(cardinality, concentration) if prior is None else np.asarray(prior, dtype=np.float64)
        self._rows: dict[int, np.ndarray] = {}

    def row(self, config: int) -> np.ndarray:
        row = self._rows.get(config)
        if row is None:
            rng = np.random.default_rng(np.random.SeedSequence([*self.key, config]))
            row = rng.dirichlet(self.prior)
            self._rows[config] = row
        return row


@dataclass
class SynthCase:
    dag: CausalGraph
    series: SeriesMatrix
    root_cause: str
    trigger: str
    seed: int
    anomaly_start: int  # 1-based first anomalous timestamp (T + 1 when there is none)
    cardinality: int = 4
    states: np.ndarray | None = field(default=None, repr=False)

    @property
    def normal_range(self) -> tuple[int, int]:
        return (1, self.anomaly_start - 1)

    def truth_json(self, provenance: dict | None = None) -> dict:
        doc = {
            "nodes": list(self.dag.nodes),
            "edges": [[u, v] for u, v in self.dag.sorted_edges()],
            "root_cause": self.root_cause,
            "trigger": self.trigger,
            "seed": self.seed,
            "normal_range": list(self.normal_range),
            "anomaly_start": self.anomaly_start,
            "T": self.series.T,
        }
        if provenance is not None:
            doc["provenance"] = provenance
        return doc

    def save(self, directory: str | Path, stem: str, provenance: dict | None = None) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        truth_path = directory / f"{stem}.truth.json"
        self.series.write_csv(csv_path)
        truth_path.write_text(json.dumps(self.truth_json(provenance), indent=2) + "\n")
        return csv_path, truth_path


def _simulate(parents: list[list[int]], tables: list[LazyCPT], start_states: np.ndarray,
              T: int, rng: np.random.Generator, card: int) -> np.ndarray:
    n = len(parents)
    states = np.zeros((n, T), dtype=np.int64)
    states[:, 0] = start_states
    weights = [card ** np.arange(len(p))[::-1] for p in parents]
    for t in range(1, T):
        prev = states[:, t - 1]
        u = rng.random(n)
        for v in range(n):
            config = int(prev[parents[v]] @ weights[v]) if parents[v] else 0
            cdf = np.cumsum(tables[v].row(config))
            states[v, t] = min(int(np.searchsorted(cdf, u[v], side="right")), card - 1)
    return states


def sample_case(dag: CausalGraph, rng: np.random.Generator, T: int = 2000, anomaly_fraction: float = 0.25,
                cardinality: int = 4, concentration: float = 1.0, jitter: float = 0.01,
                fault_strength: float = 5.0, detector=None, seed: int | None = None) -> SynthCase:
    """Generate one normal ++ anomalous case on ``dag``.

    The root cause's table is re-drawn from a Dirichlet prior that adds
    ``fault_strength`` to one fault state, the extreme state farther from the
    root's normal-period mean.  ``fault_strength=0`` re-draws it from the
    symmetric prior.  ``detector(series, normal_range)`` picks the trigger;
    by default the robust z-score detector runs on a trailing mean of
    ``DETECT_SMOOTHING`` steps.
    """
    if T < 100:
        raise ValueError("T must be >= 100")
    if not 0.0 <= anomaly_fraction < 1.0:
        raise ValueError("anomaly_fraction must lie in [0, 1)")
    if fault_strength < 0:
        raise ValueError("fault_strength must be >= 0")
    if seed is None:
        seed = int(rng.integers(0, 2**31 - 1))
    names = dag.nodes
    index = {n: i for i, n in enumerate(names)}
    parents = [sorted(index[u] for u, v in dag.edges if v == name) for name in names]
    n = len(names)
    normal = [LazyCPT(seed, v, 0, len(parents[v]), cardinality, concentration) for v in range(n)]
    root = int(rng.integers(0, n))

    n_anom = int(round(anomaly_fraction * T))
    n_norm = T - n_anom
    start = rng.integers(0, cardinality, size=n)
    states = _simulate(parents, normal, start, n_norm, rng, cardinality)
    if n_anom:
        fault_state = 0 if states[root].mean() > (cardinality - 1) / 2 else cardinality - 1
        prior = np.full(cardinality, concentration)
        prior[fault_state] += fault_strength
        anomalous = list(normal)
        anomalous[root] = LazyCPT(seed, root, 1, len(parents[root]), cardinality, concentration, prior)
        cont = _simulate(parents, anomalous, states[:, -1], n_anom + 1, rng, cardinality)
        states = np.concatenate([states, cont[:, 1:]], axis=1)
    values = states + rng.normal(0.0, jitter, size=states.shape)
    series = SeriesMatrix(names, values)

    if detector is None:
        def detector(m, normal_range):
            return detect_trigger(m, normal_range, smooth=DETECT_SMOOTHING)
    # with no anomalous segment there is nothing to detect; the root stands in
    trigger = detector(series, (1, n_norm)) if n_anom else names[root]
    return SynthCase(dag, series, names[root], trigger, seed, n_norm + 1, cardinality, states)
