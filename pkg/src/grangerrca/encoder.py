"""Contrastive pre-training of the decomposition-linear backbone.

The backbone is channel independent: one set of weights is applied to every
series.  For a segment it produces one ``d``-vector per timestamp by applying
a trend map and a remainder map to the trailing ``window`` values of the
segment's moving-average decomposition.

Pre-training uses positive pairs only: the same absolute timestamp seen
inside two overlapping random crops.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .errors import NonFiniteError
from .series import CropPair, SeriesMatrix, random_crop

log = logging.getLogger(__name__)


def effective_kernel(k: int, length: int) -> int:
    """Largest odd kernel <= min(k, length); 1 (no smoothing) below 3."""
    k = min(k, length if length % 2 == 1 else length - 1)
    return k if k >= 3 else 1


def decompose(segment, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``segment`` into a centred moving-average trend and the remainder.

    The average uses edge replication, so the output has the input's length
    and ``trend + remainder`` reproduces the segment.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 3, got {k}")
    x = np.asarray(segment, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ValueError("cannot decompose an empty segment")
    trend = x @ de.moving_average_matrix(x.shape[-1], k).T
    return trend, x - trend


def _decompose_any(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    k_eff = effective_kernel(k, x.shape[-1])
    if k_eff == 1:
        return x.copy(), np.zeros_like(x)
    return decompose(x, k_eff)


def trailing_windows(x: np.ndarray, window: int) -> np.ndarray:
    """(L, window) matrix whose row t is x[t-window+1..t], left-padded with x[0]."""
    padded = np.concatenate([np.full(window - 1, x[0]), x])
    return np.lib.stride_tricks.sliding_window_view(padded, window).copy()


@dataclass
class BackboneEncoder:
    kernel: int
    window: int
    trend_weight: np.ndarray  # (d, window)
    remainder_weight: np.ndarray  # (d, window)

    def __post_init__(self):
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 3, got {self.kernel}")
        if self.trend_weight.shape != self.remainder_weight.shape or self.trend_weight.shape[1] != self.window:
            raise ValueError("trend/remainder weights must both be (d, window)")

    @property
    def d(self) -> int:
        return self.trend_weight.shape[0]

    @classmethod
    def initialize(cls, rng: np.random.Generator, d: int = 64, window: int = 32, kernel: int = 25) -> "BackboneEncoder":
        bound = 1.0 / np.sqrt(window)
        return cls(kernel, window,
                   rng.uniform(-bound, bound, size=(d, window)),
                   rng.uniform(-bound, bound, size=(d, window)))

    @classmethod
    def zeros(cls, d: int = 64, window: int = 32, kernel: int = 25) -> "BackboneEncoder":
        return cls(kernel, window, np.zeros((d, window)), np.zeros((d, window)))

    def copy(self) -> "BackboneEncoder":
        return BackboneEncoder(self.kernel, self.window, self.trend_weight.copy(), self.remainder_weight.copy())

    def features(self, segment: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trailing trend/remainder windows for every timestamp of ``segment``."""
        segment = np.asarray(segment, dtype=np.float64)
        if segment.ndim != 1 or segment.size == 0:
            raise ValueError("encode expects a non-empty 1-D segment")
        trend, rem = _decompose_any(segment, self.kernel)
        return trailing_windows(trend, self.window), trailing_windows(rem, self.window)

    def state(self) -> dict[str, np.ndarray]:
        return {"trend_weight": self.trend_weight, "remainder_weight": self.remainder_weight}

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update(kernel=self.kernel, window=self.window)
        de.save_checkpoint(path, self.state(), meta)

    @classmethod
    def load(cls, path) -> "BackboneEncoder":
        params, meta = de.load_checkpoint(path)
        return cls(int(meta["kernel"]), int(meta["window"]), params["trend_weight"], params["remainder_weight"])


def encode(encoder: BackboneEncoder, segment) -> np.ndarray:
    """Per-timestamp representations, shape (len(segment), d)."""
    tw, rw = encoder.features(np.asarray(segment, dtype=np.float64))
    return tw @ encoder.trend_weight.T + rw @ encoder.remainder_weight.T


def _encode_graph(tw, rw, trend_weight: de.Value, remainder_weight: de.Value) -> de.Value:
    return de.linear(tw, trend_weight) + de.linear(rw, remainder_weight)


@dataclass
class Projector:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialize(cls, rng: np.random.Generator, d: int) -> "Projector":
        bound = 1.0 / np.sqrt(d)
        return cls(rng.uniform(-bound, bound, (d, d)), np.zeros(d),
                   rng.uniform(-bound, bound, (d, d)), np.zeros(d))


def _project_graph(h: de.Value, p: dict[str, de.Value]) -> de.Value:
    return de.linear(de.sigmoid(de.linear(h, p["proj_w1"], p["proj_b1"])), p["proj_w2"], p["proj_b2"])


def contrastive_loss(z1, p2, z2, p1, weights=None) -> de.Value:
    """Negative-pair-free loss over aligned overlap timestamps.

    Row r of every argument is the representation of the same absolute
    timestamp; ``z`` are projected, ``p`` are raw encoder outputs and are
    detached here.  ``weights`` (summing to 1) default to a plain mean.
    """
    sims = de.cosine_similarity(z1, de.stopgrad(p2)) + de.cosine_similarity(de.stopgrad(p1), z2)
    if weights is None:
        return -0.5 * de.mean(sims)
    return -0.5 * de.sum(sims * de.as_value(weights))


@dataclass
class PretrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    crops_per_series: int = 32
    d: int = 64
    kernel: int = 25
    window: int = 32
    max_crop_length: int = 64
    eval_pairs: int = 256

    def __post_init__(self):
        for name in ("batch_size", "lr", "crops_per_series", "d", "kernel", "window", "max_crop_length", "eval_pairs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class PretrainResult:
    encoder: BackboneEncoder
    projector: Projector
    loss_history: list[float] = field(default_factory=list)  # index 0 = before training
    alignment_history: list[float] = field(default_factory=list)


def draw_crops(T: int, n: int, max_length: int, rng: np.random.Generator) -> list[CropPair]:
    """Crop pairs confined to a random span of at most ``max_length`` timestamps."""
    span = min(max_length, T)
    out = []
    for _ in range(n):
        start = int(rng.integers(0, T - span + 1))
        out.append(random_crop(span, rng).shifted(start))
    return out


def _pair_features(encoder: BackboneEncoder, series: np.ndarray, pair: CropPair):
    """Overlap-aligned features of both crops of one pair."""
    t1, r1 = encoder.features(series[pair.first])
    t2, r2 = encoder.features(series[pair.second])
    off = pair.a2 - pair.a1
    n = pair.overlap_length
    return t1[off:off + n], r1[off:off + n], t2[:n], r2[:n]


def _batch_arrays(encoder, values, items):
    parts = [_pair_features(encoder, values[i], pair) for i, pair in items]
    weights = np.concatenate([np.full(len(p[0]), 1.0 / (len(p[0]) * len(parts))) for p in parts])
    stacked = [np.concatenate([p[j] for p in parts]) for j in range(4)]
    return stacked, weights


class _Trainer:
    def __init__(self, encoder: BackboneEncoder, projector: Projector, lr: float):
        self.params = {
            "trend_weight": de.parameter(encoder.trend_weight),
            "remainder_weight": de.parameter(encoder.remainder_weight),
            "proj_w1": de.parameter(projector.w1),
            "proj_b1": de.parameter(projector.b1),
            "proj_w2": de.parameter(projector.w2),
            "proj_b2": de.parameter(projector.b2),
        }
        self.opt = de.Adam(self.params, lr=lr)

    def loss(self, arrays, weights) -> de.Value:
        t1, r1, t2, r2 = arrays
        p = self.params
        f1 = _encode_graph(t1, r1, p["trend_weight"], p["remainder_weight"])
        f2 = _encode_graph(t2, r2, p["trend_weight"], p["remainder_weight"])
        return contrastive_loss(_project_graph(f1, p), f2, _project_graph(f2, p), f1, weights)

    def alignment(self, arrays, weights) -> float:
        t1, r1, t2, r2 = arrays
        p = self.params
        f1 = _encode_graph(t1, r1, p["trend_weight"], p["remainder_weight"])
        f2 = _encode_graph(t2, r2, p["trend_weight"], p["remainder_weight"])
        return float(np.sum(weights * de.cosine_similarity(f1.data, f2.data).data))

    def export(self, kernel: int, window: int) -> tuple[BackboneEncoder, Projector]:
        p = {k: v.data.copy() for k, v in self.params.items()}
        return (BackboneEncoder(kernel, window, p["trend_weight"], p["remainder_weight"]),
                Projector(p["proj_w1"], p["proj_b1"], p["proj_w2"], p["proj_b2"]))


def pretrain(m: SeriesMatrix, cfg: PretrainConfig, rng: np.random.Generator,
             init: BackboneEncoder | None = None, projector: Projector | None = None) -> PretrainResult:
    """Train the backbone on all series of ``m`` as one corpus.

    Loss and overlap alignment are measured on a fixed evaluation set of crop
    pairs before training and after every epoch.
    """
    if m.T < 2:
        raise ValueError("pretraining needs T >= 2")
    encoder = init.copy() if init is not None else BackboneEncoder.initialize(rng, cfg.d, cfg.window, cfg.kernel)
    if projector is None:
        projector = Projector.initialize(rng, encoder.d)
    trainer = _Trainer(encoder, projector, cfg.lr)
    values = m.values

    eval_items = [(int(rng.integers(0, m.N)), pair)
                  for pair in draw_crops(m.T, cfg.eval_pairs, cfg.max_crop_length, rng)]
    eval_arrays, eval_weights = _batch_arrays(encoder, values, eval_items)

    def evaluate():
        return trainer.loss(eval_arrays, eval_weights).item(), trainer.alignment(eval_arrays, eval_weights)

    loss0, align0 = evaluate()
    result = PretrainResult(encoder, projector, [loss0], [align0])
    for epoch in range(cfg.epochs):
        items = [(i, pair) for i in range(m.N)
                 for pair in draw_crops(m.T, cfg.crops_per_series, cfg.max_crop_length, rng)]
        order = rng.permutation(len(items))
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[j] for j in order[start:start + cfg.batch_size]]
            arrays, weights = _batch_arrays(encoder, values, batch)
            trainer.opt.zero_grad()
            loss = trainer.loss(arrays, weights)
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"contrastive loss is non-finite at epoch {epoch}")
            loss.backward()
            trainer.opt.step()
        lv, av = evaluate()
        result.loss_history.append(lv)
        result.alignment_history.append(av)
        log.debug("pretrain epoch %d: loss %.5f alignment %.5f", epoch + 1, lv, av)
    result.encoder, result.projector = trainer.export(encoder.kernel, encoder.window)
    return result
