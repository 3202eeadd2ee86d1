"""Top-k hit ratio and mean reciprocal rank."""
from __future__ import annotations

from typing import Sequence


def _check(rankings: Sequence[Sequence[str]], truths: Sequence[str]) -> None:
    if len(rankings) != len(truths):
        raise ValueError(f"{len(rankings)} rankings but {len(truths)} truths")


def rank_of(ranking: Sequence[str], truth: str) -> int | None:
    """1-based position of ``truth``; None when absent."""
    for i, node in enumerate(ranking, start=1):
        if node == truth:
            return i
    return None


def hr_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[str], k: int) -> float:
    """Fraction of cases whose truth sits in the first ``k`` entries."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check(rankings, truths)
    if not truths:
        return 0.0
    hits = sum(1 for r, t in zip(rankings, truths) if t in list(r)[:k])
    return hits / len(truths)


def mrr(rankings: Sequence[Sequence[str]], truths: Sequence[str]) -> float:
    """Mean of 1/rank; a truth missing from its ranking counts as 0."""
    _check(rankings, truths)
    if not truths:
        return 0.0
    total = 0.0
    for r, t in zip(rankings, truths):
        pos = rank_of(r, t)
        if pos is not None:
            total += 1.0 / pos
    return total / len(truths)
