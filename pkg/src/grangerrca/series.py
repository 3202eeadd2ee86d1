"""Multivariate KPI series: ingestion, normalization, cropping and windowing.

Public index conventions are 1-based and inclusive (``CropPair``, reference
ranges), arrays are 0-based as usual in numpy.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateName,
    MalformedRow,
    MissingValue,
    NonNumericCell,
    ShapeError,
    TooFewSeries,
    UnknownNode,
)

STD_FLOOR = 1e-8
MISSING_TOKENS = frozenset({"", "nan", "na", "null", "none"})


@dataclass(frozen=True)
class SeriesMatrix:
    """N named series x T timestamps; row i belongs to ``names[i]``."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(names):
            raise ShapeError(f"values shape {values.shape} does not match {len(names)} names")
        if len(names) < 2:
            raise TooFewSeries(f"need at least 2 series, got {len(names)}")
        seen = set()
        for n in names:
            if n in seen:
                raise DuplicateName(n)
            seen.add(n)
        if not np.all(np.isfinite(values)):
            raise ValueError("series contain non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownNode(name) from None

    def to_json(self) -> dict:
        return {"names": list(self.names), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SeriesMatrix":
        return cls(tuple(obj["names"]), np.asarray(obj["values"], dtype=np.float64))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names)
            for row in self.values.T:
                writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, m: SeriesMatrix) -> SeriesMatrix:
        return SeriesMatrix(m.names, (m.values - self.mean[:, None]) / self.std[:, None])

    def invert(self, m: SeriesMatrix) -> SeriesMatrix:
        return SeriesMatrix(m.names, m.values * self.std[:, None] + self.mean[:, None])

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass(frozen=True)
class CropPair:
    """Two overlapping segments ``[a1, b1]`` and ``[a2, b2]``, 1-based inclusive.

    Ordering constraint: ``1 <= a1 <= a2 <= b1 <= b2 <= T``; the overlap is
    ``[a2, b1]``.
    """

    a1: int
    a2: int
    b1: int
    b2: int

    def __post_init__(self):
        if not (1 <= self.a1 <= self.a2 <= self.b1 <= self.b2):
            raise ValueError(f"invalid crop ordering {self}")

    # 0-based half-open slices into a length-T array
    @property
    def first(self) -> slice:
        return slice(self.a1 - 1, self.b1)

    @property
    def second(self) -> slice:
        return slice(self.a2 - 1, self.b2)

    @property
    def overlap(self) -> slice:
        return slice(self.a2 - 1, self.b1)

    @property
    def overlap_length(self) -> int:
        return self.b1 - self.a2 + 1

    def shifted(self, offset: int) -> "CropPair":
        return CropPair(self.a1 + offset, self.a2 + offset, self.b1 + offset, self.b2 + offset)


@dataclass(frozen=True)
class WindowBatch:
    """``inputs[b]`` holds x^{t-w..t-1} for every series and ``targets[b]`` holds x^t."""

    inputs: np.ndarray  # (B, N, w)
    targets: np.ndarray  # (B, N)
    w: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "WindowBatch":
        return WindowBatch(self.inputs[idx], self.targets[idx], self.w)


def _parse_cell(text: str, row: int, col: int) -> float:
    token = text.strip()
    if token.lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise NonNumericCell(f"row {row}, column {col}: {text!r}") from None
    if not math.isfinite(value):
        raise NonNumericCell(f"row {row}, column {col}: non-finite value {text!r}")
    return value


def ingest_csv(path: str | Path, missing: str = "ffill") -> SeriesMatrix:
    """Read a CSV whose header names the series and whose rows are timestamps.

    ``missing`` is ``"ffill"`` (forward-fill gaps, leading gaps are an error)
    or ``"error"``.
    """
    if missing not in ("ffill", "error"):
        raise ValueError(f"unknown missing-value policy {missing!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow("empty file") from None
        seen = set()
        for name in header:
            if name in seen:
                raise DuplicateName(name)
            seen.add(name)
        if len(header) < 2:
            raise TooFewSeries(f"need at least 2 series, got {len(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
            rows.append([_parse_cell(c, lineno, j + 1) for j, c in enumerate(row)])
    values = np.array(rows, dtype=np.float64).reshape(-1, len(header)).T
    gaps = np.isnan(values)
    if gaps.any():
        if missing == "error":
            i, t = np.argwhere(gaps)[0]
            raise MissingValue(f"series {header[i]!r} missing at timestamp {t + 1}")
        if gaps[:, 0].any():
            i = int(np.argmax(gaps[:, 0]))
            raise MissingValue(f"series {header[i]!r} has a leading gap, cannot forward-fill")
        for t in range(1, values.shape[1]):
            col = gaps[:, t]
            values[col, t] = values[col, t - 1]
    return SeriesMatrix(tuple(header), values)


def load_series_json(path: str | Path) -> SeriesMatrix:
    with open(path) as fh:
        return SeriesMatrix.from_json(json.load(fh))


def normalize(m: SeriesMatrix, reference: tuple[int, int] | None = None) -> tuple[SeriesMatrix, NormalizationStats]:
    """Per-series z-score using mean/std of the 1-based inclusive ``reference`` range."""
    first, last = reference if reference is not None else (1, m.T)
    if last < first:
        raise ValueError(f"empty reference range [{first}, {last}]")
    if first < 1 or last > m.T:
        raise ValueError(f"reference range [{first}, {last}] outside [1, {m.T}]")
    ref = m.values[:, first - 1:last]
    stats = NormalizationStats(ref.mean(axis=1), np.maximum(ref.std(axis=1), STD_FLOOR))
    return stats.apply(m), stats


def random_crop(T: int, rng: np.random.Generator) -> CropPair:
    """Draw two overlapping segments of a length-``T`` series.

    Sorting four independent uniform draws gives every admissible tuple
    positive probability.
    """
    if T < 2:
        raise ValueError(f"random_crop needs T >= 2, got {T}")
    a1, a2, b1, b2 = np.sort(rng.integers(1, T + 1, size=4))
    return CropPair(int(a1), int(a2), int(b1), int(b2))


def sliding_windows(m: SeriesMatrix | np.ndarray, w: int) -> WindowBatch:
    """All T-w (history, next value) pairs; targets cover timestamps w+1..T."""
    values = m.values if isinstance(m, SeriesMatrix) else np.atleast_2d(np.asarray(m, dtype=np.float64))
    T = values.shape[1]
    if w < 1 or T <= w:
        raise ShapeError(f"sliding_windows needs T > w >= 1, got T={T}, w={w}")
    view = np.lib.stride_tricks.sliding_window_view(values, w, axis=1)  # (N, T-w+1, w)
    inputs = np.ascontiguousarray(view[:, :-1, :].transpose(1, 0, 2))
    targets = np.ascontiguousarray(values[:, w:].T)
    return WindowBatch(inputs, targets, w)


def series_from_arrays(names: Sequence[str], values) -> SeriesMatrix:
    return SeriesMatrix(tuple(names), np.asarray(values, dtype=np.float64))
