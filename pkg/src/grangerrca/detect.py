"""Trigger-point detection with robust z-scores."""
from __future__ import annotations

import numpy as np

from .series import SeriesMatrix

MAD_SCALE = 1.4826
MAD_FLOOR = 1e-8


def rolling_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean along the last axis; the first window-1 points average what exists."""
    if window <= 1:
        return np.asarray(x, dtype=np.float64)
    c = np.cumsum(np.asarray(x, dtype=np.float64), axis=-1)
    out = c.copy()
    out[..., window:] = c[..., window:] - c[..., :-window]
    counts = np.minimum(np.arange(1, x.shape[-1] + 1), window)
    return out / counts


def robust_scores(series: SeriesMatrix, normal_range: tuple[int, int], smooth: int = 1) -> np.ndarray:
    """|x - median| / (1.4826 * MAD) per series, statistics taken on ``normal_range``.

    ``smooth`` > 1 scores a trailing rolling mean instead of raw values, which
    turns a shift in a discrete variable's distribution into a level shift.
    """
    first, last = normal_range
    if last < first:
        raise ValueError("normal range must be non-empty")
    x = rolling_mean(series.values, smooth)
    ref = x[:, first - 1:last]
    med = np.median(ref, axis=1, keepdims=True)
    mad = np.median(np.abs(ref - med), axis=1, keepdims=True)
    return np.abs(x - med) / np.maximum(MAD_SCALE * mad, MAD_FLOOR)


def detect_trigger(series: SeriesMatrix, normal_range: tuple[int, int], threshold: float = 3.0,
                   smooth: int = 1) -> str:
    """Series whose score first exceeds ``threshold`` after the normal range.

    Ties on the first exceedance go to the larger peak score, then to the
    earlier series.  When nothing exceeds, the largest peak wins.
    """
    z = robust_scores(series, normal_range, smooth)[:, normal_range[1]:]
    if z.shape[1] == 0:
        z = robust_scores(series, normal_range, smooth)
    peaks = z.max(axis=1)
    over = z > threshold
    hit = over.any(axis=1)
    if hit.any():
        first = np.where(hit, over.argmax(axis=1), np.iinfo(np.int64).max)
        keys = [(first[i], -peaks[i], i) for i in range(series.N)]
    else:
        keys = [(-peaks[i], i) for i in range(series.N)]
    return series.names[min(range(series.N), key=lambda i: keys[i])]
