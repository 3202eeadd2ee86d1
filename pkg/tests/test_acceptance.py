"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Criteria 7 and 8 share one 50-case benchmark suite and take several minutes.
"""
from __future__ import annotations

import json
import time

import numpy as np
import pytest

from grangerrca import diffengine as de
from grangerrca.bench import BenchConfig, generate_suite, run_benchmark
from grangerrca.diagnosis import personalization_vector, personalized_pagerank, reverse_graph
from grangerrca.discovery import DiscoveryConfig, prune_to_dag, threshold_graph, train_discovery
from grangerrca.encoder import PretrainConfig, contrastive_loss, pretrain
from grangerrca.graphs import CausalGraph
from grangerrca.metrics import hr_at_k, mrr
from grangerrca.pipeline import PipelineConfig, run_pipeline
from grangerrca.series import SeriesMatrix, normalize
from grangerrca.synth import generate_dag, sample_case

from oracles import dense_pagerank, edge_on_cycle, fd_gradient, lag_system, count_hits, count_mrr, random_composition

GRAD_REL_TOL = 1e-4
GRAD_STEP = 1e-5
GRAD_BUDGET_S = 30.0
PAGERANK_LINF_TOL = 1e-8
PAGERANK_SUM_TOL = 1e-9
LAG_F1_MIN = 0.8
LAG_BUDGET_S = 300.0
HR5_MARGIN = 0.15
BENCH_BUDGET_S = 900.0


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_c01_gradient_correctness(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, used = 0.0, set()
    for _ in range(50):
        fn, params, ops = random_composition(rng)
        used |= ops
        assert sum(p.data.size for p in params.values()) <= 200
        _, analytic = de.forward_backward(fn, params)
        numeric = fd_gradient(fn, params, GRAD_STEP)
        for name in params:
            a, n = analytic[name], numeric[name]
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - start
    expected = {"linear", "mul", "add", "moving_average", "cosine_similarity", "mse", "stopgrad", "mean", "sigmoid"}
    ok = worst < GRAD_REL_TOL and elapsed < GRAD_BUDGET_S and expected <= used
    report(capsys, 1, ok, f"max rel err {worst:.2e} (< {GRAD_REL_TOL}), {elapsed:.1f}s (< {GRAD_BUDGET_S}s), "
                          f"missing primitives {sorted(expected - used)}")


def test_c02_stop_gradient(capsys):
    rng = np.random.default_rng(7)
    shape = (12, 8)
    z1, z2 = de.parameter(rng.normal(size=shape)), de.parameter(rng.normal(size=shape))
    p1, p2 = de.parameter(rng.normal(size=shape)), de.parameter(rng.normal(size=shape))
    loss = contrastive_loss(z1, p2, z2, p1)
    loss.backward()
    blocked_zero = bool(np.all(p1.grad == 0.0) and np.all(p2.grad == 0.0))
    open_nonzero = bool(np.any(z1.grad != 0.0) and np.any(z2.grad != 0.0))
    bumped = contrastive_loss(z1, de.Value(p2.data + 0.1 * rng.normal(size=shape)), z2,
                              de.Value(p1.data + 0.1 * rng.normal(size=shape)))
    forward_moves = abs(bumped.item() - loss.item()) > 1e-6
    ok = blocked_zero and open_nonzero and forward_moves
    report(capsys, 2, ok, f"stopped-branch grads exactly 0: {blocked_zero}; z-branch grads nonzero: {open_nonzero}; "
                          f"loss change under p perturbation {abs(bumped.item() - loss.item()):.3e}")


def test_c03_pagerank_oracle(capsys):
    rng = np.random.default_rng(3)
    worst_inf, worst_sum, dangling_graphs = 0.0, 0.0, 0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        names = tuple(f"n{i}" for i in range(n))
        p_edge = rng.uniform(0.0, 0.6)
        edges = {(names[i], names[j]) for i in range(n) for j in range(n) if i != j and rng.random() < p_edge}
        g = reverse_graph(CausalGraph(names, edges))
        p = personalization_vector(g, rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0))
        damping = float(rng.uniform(0.5, 0.95))
        got = personalized_pagerank(g, p, damping)
        want = dense_pagerank(g, p, damping)
        dangling_graphs += any(g.out_degree(v) == 0 for v in names)
        worst_inf = max(worst_inf, float(np.max(np.abs(got - want))))
        worst_sum = max(worst_sum, abs(float(got.sum()) - 1.0))
    ok = worst_inf < PAGERANK_LINF_TOL and worst_sum < PAGERANK_SUM_TOL and dangling_graphs > 0
    report(capsys, 3, ok, f"max L-inf {worst_inf:.2e} (< {PAGERANK_LINF_TOL}), max |sum-1| {worst_sum:.2e} "
                          f"(< {PAGERANK_SUM_TOL}), graphs with dangling nodes {dangling_graphs}/100")


def test_c04_dag_invariant(capsys):
    rng = np.random.default_rng(4)
    cyclic_outputs, bad_removals, total_removed = 0, 0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 31))
        names = tuple(f"s{i}" for i in range(n))
        density = rng.uniform(0.02, 0.3)
        edges = {(names[i], names[j]) for i in range(n) for j in range(n) if i != j and rng.random() < density}
        g = CausalGraph(names, edges)
        m = SeriesMatrix(names, rng.normal(size=(n, 40)))
        removed: list = []
        out = prune_to_dag(g, m, removed)
        cyclic_outputs += not out.is_acyclic()
        original = g.to_networkx()
        bad_removals += sum(1 for e in removed if not edge_on_cycle(original, e))
        total_removed += len(removed)
    ok = cyclic_outputs == 0 and bad_removals == 0
    report(capsys, 4, ok, f"cyclic outputs {cyclic_outputs}/1000; removed off-cycle edges {bad_removals} "
                          f"of {total_removed} removals")


def test_c05_metric_oracles(capsys):
    rng = np.random.default_rng(5)
    mismatches = 0
    absent_rule = True
    for _ in range(200):
        n_cases = int(rng.integers(1, 60))
        universe = [f"v{i}" for i in range(int(rng.integers(2, 15)))]
        rankings, truths = [], []
        for _ in range(n_cases):
            length = int(rng.integers(0, len(universe) + 1))
            rankings.append(list(rng.permutation(universe)[:length]))
            truths.append(str(rng.choice(universe)))
        for k in (1, 3, 5, 10):
            mismatches += hr_at_k(rankings, truths, k) != count_hits(rankings, truths, k)
        mismatches += mrr(rankings, truths) != count_mrr(rankings, truths)
    absent_rule = mrr([["a", "b"], ["b"], ["c"]], ["a", "b", "z"]) == (1 + 1 + 0) / 3 and mrr([["b"]], ["a"]) == 0.0
    ok = mismatches == 0 and absent_rule
    report(capsys, 5, ok, f"oracle mismatches {mismatches} over 200 suites; absent-truth scores 0: {absent_rule}")


def test_c06_granger_recovery(capsys):
    start = time.perf_counter()
    scores = []
    for seed in range(10):
        m, truth = lag_system(seed)
        normed, _ = normalize(m)
        result = train_discovery(normed, DiscoveryConfig(window=32), np.random.default_rng(100 + seed))
        found = threshold_graph(result.attention, 0.5).edges
        tp = len(found & truth)
        precision = tp / len(found) if found else 0.0
        recall = tp / len(truth)
        scores.append(0.0 if tp == 0 else 2 * precision * recall / (precision + recall))
    elapsed = time.perf_counter() - start
    f1 = float(np.mean(scores))
    ok = f1 >= LAG_F1_MIN and elapsed < LAG_BUDGET_S
    report(capsys, 6, ok, f"mean edge F1 {f1:.3f} (>= {LAG_F1_MIN}) over 10 seeds "
                          f"{[round(s, 2) for s in scores]}, {elapsed:.0f}s (< {LAG_BUDGET_S:.0f}s)")


@pytest.fixture(scope="module")
def benchmark_reports():
    cfg = BenchConfig(nodes=10, cases=50, timestamps=2000, seed=0)
    cases = generate_suite(cfg)
    start = time.perf_counter()
    with_pretrain = run_benchmark(cfg, cases)
    elapsed = time.perf_counter() - start
    ablated_cfg = BenchConfig(nodes=10, cases=50, timestamps=2000, seed=0,
                              pipeline=PipelineConfig(include_trigger=True, scope="ancestors", pretrain=False))
    without = run_benchmark(ablated_cfg, cases)
    # reference point: how often the detected trigger already is the root cause
    trigger_is_root = sum(c.trigger == c.root_cause for c in cases) / len(cases)
    return with_pretrain, without, elapsed, trigger_is_root


def test_c07_synthetic_benchmark(capsys, benchmark_reports):
    report_, _, elapsed, trigger_is_root = benchmark_reports
    hr5, base_hr5 = report_.hr(5), report_.baseline_hr(5)
    ok = hr5 >= base_hr5 + HR5_MARGIN and report_.mrr > report_.baseline_mrr and elapsed < BENCH_BUDGET_S
    report(capsys, 7, ok, f"HR@5 {hr5:.2f} vs random {base_hr5:.2f} (margin >= {HR5_MARGIN}); "
                          f"MRR {report_.mrr:.3f} vs random {report_.baseline_mrr:.3f}; "
                          f"HR@1 {report_.hr(1):.2f}, HR@3 {report_.hr(3):.2f}; {elapsed:.0f}s (< {BENCH_BUDGET_S:.0f}s); "
                          f"trigger is the root in {trigger_is_root:.2f} of cases")


def test_c08_pretraining_ablation(capsys, benchmark_reports):
    full, ablated, _, _ = benchmark_reports
    ok = ablated.hr(5) <= full.hr(5)
    report(capsys, 8, ok, f"HR@5 without pretraining {ablated.hr(5):.2f} <= with pretraining {full.hr(5):.2f} "
                          f"(MRR {ablated.mrr:.3f} vs {full.mrr:.3f})")


def test_c09_determinism(capsys, tmp_path):
    rng = np.random.default_rng(9)
    case = sample_case(generate_dag(10, 0.3, rng), rng)
    cfg = PipelineConfig(seed=11)
    run_pipeline(case.series, case.trigger, cfg, tmp_path / "a")
    run_pipeline(case.series, case.trigger, cfg, tmp_path / "b")
    first = (tmp_path / "a" / "ranking.json").read_bytes()
    second = (tmp_path / "b" / "ranking.json").read_bytes()
    ok = first == second and len(json.loads(first)["ranking"]) > 0
    report(capsys, 9, ok, f"ranking JSON byte-identical across two runs: {first == second} ({len(first)} bytes)")


def test_c10_contrastive_dynamics(capsys):
    rng = np.random.default_rng(10)
    t = np.arange(2000)
    rows = []
    for _ in range(10):
        periods = rng.uniform(8, 120, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        amps = rng.uniform(0.3, 1.0, size=3)
        rows.append(sum(a * np.sin(2 * np.pi * t / p + ph) for a, p, ph in zip(amps, periods, phases))
                    + 0.05 * rng.normal(size=t.size))
    m, _ = normalize(SeriesMatrix(tuple(f"p{i}" for i in range(10)), np.array(rows)))
    result = pretrain(m, PretrainConfig(epochs=50), np.random.default_rng(0))
    loss0, loss50 = result.loss_history[0], result.loss_history[50]
    align0, align50 = result.alignment_history[0], result.alignment_history[50]
    ok = loss50 < loss0 and align50 > align0
    report(capsys, 10, ok, f"L_con epoch 0 {loss0:.4f} -> epoch 50 {loss50:.4f}; "
                           f"overlap alignment {align0:.4f} -> {align50:.4f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
