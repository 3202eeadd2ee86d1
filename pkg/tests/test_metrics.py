import numpy as np
import pytest

from grangerrca.metrics import hr_at_k, mrr, rank_of

from oracles import count_hits, count_mrr


def test_definition_examples():
    assert hr_at_k([["b", "a", "c"]], ["a"], 1) == 0.0
    assert hr_at_k([["b", "a", "c"]], ["a"], 3) == 1.0
    assert hr_at_k([["a", "b"], ["c", "d"]], ["a", "c"], 1) == 1.0
    assert mrr([["b", "a"]], ["a"]) == 0.5
    assert mrr([["b", "c"]], ["a"]) == 0.0
    assert mrr([["a"], ["b", "a"], ["b"]], ["a", "a", "a"]) == pytest.approx(0.5)
    assert rank_of(["x", "y"], "y") == 2 and rank_of(["x"], "y") is None


def test_errors():
    with pytest.raises(ValueError):
        hr_at_k([["a"]], ["a"], 0)
    with pytest.raises(ValueError):
        hr_at_k([["a"]], ["a", "b"], 1)
    with pytest.raises(ValueError):
        mrr([], ["a"])


def test_matches_counting_oracle():
    rng = np.random.default_rng(0)
    names = [f"n{i}" for i in range(12)]
    for _ in range(50):
        size = int(rng.integers(1, 60))
        rankings = [list(rng.choice(names, size=int(rng.integers(0, 12)), replace=False)) for _ in range(size)]
        truths = [str(rng.choice(names)) for _ in range(size)]
        for k in (1, 3, 5, 20):
            assert hr_at_k(rankings, truths, k) == count_hits(rankings, truths, k)
        assert mrr(rankings, truths) == pytest.approx(count_mrr(rankings, truths), abs=1e-15)
