import networkx as nx
import numpy as np
import pytest

from grangerrca.detect import detect_trigger, robust_scores, rolling_mean
from grangerrca.series import SeriesMatrix
from grangerrca.synth import generate_dag, node_names, sample_case


def test_two_node_full_density():
    g = generate_dag(2, 1.0, np.random.default_rng(0))
    assert len(g.edges) == 1


@pytest.mark.parametrize("n", [10, 20, 30, 40, 50])
def test_larger_node_counts(n):
    g = generate_dag(n, 0.3, np.random.default_rng(n))
    assert len(g.nodes) == n and g.is_acyclic()
    assert nx.is_weakly_connected(g.to_networkx())


def test_dags_acyclic():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = generate_dag(int(rng.integers(2, 15)), float(rng.uniform(0.05, 1.0)), rng)
        assert nx.is_directed_acyclic_graph(g.to_networkx())


def test_generate_dag_validation():
    with pytest.raises(ValueError):
        generate_dag(1, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        generate_dag(3, 0.0, np.random.default_rng(0))


def small_case(seed, **kw):
    rng = np.random.default_rng(seed)
    dag = generate_dag(6, 0.4, rng)
    return sample_case(dag, rng, T=kw.pop("T", 400), **kw)


def test_case_shape_and_reproducibility():
    a, b = small_case(3), small_case(3)
    assert a.series.values.shape == (6, 400)
    assert a.series.values.tobytes() == b.series.values.tobytes()
    assert a.root_cause in a.dag.nodes and a.anomaly_start == 301
    assert set(np.unique(a.states)) <= {0, 1, 2, 3}
    assert np.max(np.abs(a.series.values - a.states)) < 0.1


def test_zero_anomaly_fraction():
    case = small_case(4, anomaly_fraction=0.0)
    assert case.anomaly_start == 401 and case.normal_range == (1, 400)
    assert case.trigger == case.root_cause


def test_sample_case_validation():
    dag = generate_dag(3, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_case(dag, np.random.default_rng(0), T=99)


def chi_square_p(a, b, card=4):
    """Two-sample chi-square homogeneity test p-value via the regularized gamma series."""
    from math import exp, lgamma, log
    table = np.array([np.bincount(a, minlength=card), np.bincount(b, minlength=card)], dtype=float)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    k = (table.shape[1] - 1) / 2.0
    x = stat / 2.0
    if x == 0:
        return 1.0
    term, total, i = 1.0 / k, 1.0 / k, 1
    while term > 1e-15 * total:
        term *= x / (k + i)
        total += term
        i += 1
    lower = exp(k * log(x) - x - lgamma(k)) * total
    return max(0.0, 1.0 - lower)


def test_root_marginal_shifts():
    ps = []
    for seed in range(20):
        case = small_case(seed, T=2000)
        r = case.dag.nodes.index(case.root_cause)
        s = case.states[r]
        ps.append(chi_square_p(s[:case.anomaly_start - 1], s[case.anomaly_start - 1:]))
    assert np.mean(ps) < 0.01


def test_level_shift_is_detected():
    rng = np.random.default_rng(5)
    values = rng.normal(size=(4, 500))
    mad = np.median(np.abs(values[2, :400] - np.median(values[2, :400]))) * 1.4826
    values[2, 400:] += 10 * mad
    m = SeriesMatrix(("a", "b", "c", "d"), values)
    assert detect_trigger(m, (1, 400)) == "c"


def test_constant_series_fallback():
    m = SeriesMatrix(("a", "b"), np.ones((2, 50)))
    assert detect_trigger(m, (1, 40)) == detect_trigger(m, (1, 40)) == "a"


def test_earliest_crossing_wins():
    values = np.zeros((2, 100))
    values[:, :80] = np.random.default_rng(6).normal(size=(2, 80))
    values[0, 90:] = 50.0
    values[1, 85:] = 8.0
    assert detect_trigger(SeriesMatrix(("a", "b"), values), (1, 80)) == "b"


def test_rolling_mean():
    np.testing.assert_allclose(rolling_mean(np.array([2.0, 4.0, 6.0, 8.0]), 2), [2, 3, 5, 7])
    scores = robust_scores(SeriesMatrix(("a", "b"), [[0, 1, 2, 3], [1, 1, 1, 1]]), (1, 4))
    assert scores.shape == (2, 4)


def test_trigger_is_downstream_of_root():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dag = generate_dag(10, 0.3, rng)
        case = sample_case(dag, rng)
        reach = nx.descendants(dag.to_networkx(), case.root_cause) | {case.root_cause}
        hits += case.trigger in reach
    assert hits >= 80


def test_node_names():
    assert node_names(3) == ("X1", "X2", "X3")
