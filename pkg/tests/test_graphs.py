import pytest

from grangerrca.errors import UnknownNode
from grangerrca.graphs import CausalGraph, load_graph, parse_dot


def sample():
    return CausalGraph(("a", "b c", 'q"x'), {("a", "b c"), ("b c", 'q"x')}, {("a", "b c"): 0.25})


def test_unknown_edge_endpoint():
    with pytest.raises(UnknownNode):
        CausalGraph(("a",), {("a", "b")})


def test_dot_roundtrip():
    g = sample()
    back = parse_dot(g.to_dot())
    assert set(back.nodes) == set(g.nodes) and back.edges == g.edges
    assert back.similarity[("a", "b c")] == pytest.approx(0.25)


def test_json_roundtrip(tmp_path):
    g = sample()
    import json
    (tmp_path / "g.json").write_text(json.dumps(g.to_json()))
    back = load_graph(tmp_path / "g.json")
    assert back.nodes == g.nodes and back.edges == g.edges
    (tmp_path / "g.dot").write_text(g.to_dot())
    assert load_graph(tmp_path / "g.dot").edges == g.edges


def test_acyclicity():
    assert sample().is_acyclic()
    assert not CausalGraph(("a", "b"), {("a", "b"), ("b", "a")}).is_acyclic()
