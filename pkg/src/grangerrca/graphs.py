"""Directed graphs over series names, with JSON and DOT serialization."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import networkx as nx

from .errors import IngestError, UnknownNode


@dataclass
class CausalGraph:
    """Directed graph; ``similarity`` maps (u, v) to the Pearson r of the edge."""

    nodes: tuple[str, ...]
    edges: set[tuple[str, str]] = field(default_factory=set)
    similarity: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        known = set(self.nodes)
        self.edges = set(self.edges)
        for u, v in self.edges:
            if u not in known:
                raise UnknownNode(u)
            if v not in known:
                raise UnknownNode(v)

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]], similarity=None) -> "CausalGraph":
        return cls(tuple(nodes), set(edges), dict(similarity or {}))

    def successors(self, u: str) -> list[str]:
        return sorted(v for a, v in self.edges if a == u)

    def out_degree(self, u: str) -> int:
        return sum(1 for a, _ in self.edges if a == u)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())

    def sorted_edges(self) -> list[tuple[str, str]]:
        order = {n: i for i, n in enumerate(self.nodes)}
        return sorted(self.edges, key=lambda e: (order[e[0]], order[e[1]]))

    def to_json(self, provenance: dict | None = None) -> dict:
        doc = {
            "nodes": list(self.nodes),
            "edges": [
                {"source": u, "target": v, **({"similarity": self.similarity[(u, v)]} if (u, v) in self.similarity else {})}
                for u, v in self.sorted_edges()
            ],
        }
        if provenance is not None:
            doc["provenance"] = provenance
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "CausalGraph":
        """Edges may be ``{"source", "target"[, "similarity"]}`` objects or ``[u, v]`` pairs."""
        edges, sim = set(), {}
        try:
            for e in doc["edges"]:
                if isinstance(e, dict):
                    key = (e["source"], e["target"])
                    if "similarity" in e:
                        sim[key] = float(e["similarity"])
                else:
                    u, v = e
                    key = (u, v)
                edges.add(key)
            nodes = tuple(doc["nodes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"malformed graph JSON: {exc!r}") from exc
        return cls(nodes, edges, sim)

    def to_dot(self, name: str = "causal", trigger: str | None = None, top: str | None = None,
               provenance: dict | None = None) -> str:
        lines = []
        if provenance is not None:
            lines.append(f"// provenance: {json.dumps(provenance, sort_keys=True)}")
        lines.append(f"digraph {_dot_id(name)} {{")
        for n in self.nodes:
            attrs = []
            if n == trigger:
                attrs += ['style=filled', 'fillcolor="yellow"']
            elif n == top:
                attrs += ['style=filled', 'fillcolor="red"']
            lines.append(f"  {_dot_id(n)}" + (f" [{', '.join(attrs)}]" if attrs else "") + ";")
        for u, v in self.sorted_edges():
            label = f' [label="{self.similarity[(u, v)]:.3f}"]' if (u, v) in self.similarity else ""
            lines.append(f"  {_dot_id(u)} -> {_dot_id(v)}{label};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def parse_dot(text: str) -> CausalGraph:
    """Read the subset of DOT written by :meth:`CausalGraph.to_dot`."""


    ident = r'"((?:[^"\\]|\\.)*)"|([A-Za-z_][\w.]*)'
    edge_re = re.compile(rf"^\s*(?:{ident})\s*->\s*(?:{ident})\s*(\[[^\]]*\])?\s*;?\s*$")
    node_re = re.compile(rf"^\s*(?:{ident})\s*(\[[^\]]*\])?\s*;?\s*$")
    label_re = re.compile(r'label\s*=\s*"?([-+0-9.eE]+)"?')

    def unquote(q, bare):
        return bare if q is None else q.replace('\\"', '"').replace("\\\\", "\\")

    nodes, edges, sim = [], set(), {}
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith("//") or s.startswith("digraph") or s == "}":
            continue
        m = edge_re.match(s)
        if m:
            u, v = unquote(m.group(1), m.group(2)), unquote(m.group(3), m.group(4))
            for n in (u, v):
                if n not in nodes:
                    nodes.append(n)
            edges.add((u, v))
            if m.group(5):
                lm = label_re.search(m.group(5))
                if lm:
                    sim[(u, v)] = float(lm.group(1))
            continue
        m = node_re.match(s)
        if m:
            n = unquote(m.group(1), m.group(2))
            if n not in nodes:
                nodes.append(n)
    return CausalGraph(tuple(nodes), edges, sim)


def load_graph(path: str | Path) -> CausalGraph:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".dot", ".gv"):
        return parse_dot(text)
    return CausalGraph.from_json(json.loads(text))
