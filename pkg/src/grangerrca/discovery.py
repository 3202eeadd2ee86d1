"""Granger causal discovery through attention-masked one-step forecasters.

Forecaster ``i`` predicts series ``i`` from the last ``w`` values of every
series, where series ``j`` is scaled by the attention score
``alpha[j, i] = sigmoid(theta[j, i])``.  All forecasters share one
architecture (the decomposition-linear backbone followed by a linear head)
but no parameters; they are trained together as one batched graph whose loss
is the sum of the per-forecaster mean squared errors, so the gradient of each
forecaster depends on its own loss only.

By default training replaces the fixed scale ``alpha`` with a relaxed
Bernoulli sample centred on it (logistic noise on ``theta``) and adds a
penalty on each forecaster's mean off-diagonal attention.  Without these the
attention is interchangeable with the head weights and barely leaves 0.5.
Forecasting at inference time always uses the plain ``x * alpha`` mask.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import diffengine as de
from .encoder import BackboneEncoder, effective_kernel
from .errors import NonFiniteError, ShapeError
from .graphs import CausalGraph
from .series import SeriesMatrix, WindowBatch, sliding_windows

log = logging.getLogger(__name__)


@dataclass
class CausalAttentionMatrix:
    """``alpha[i, j]`` is the attention from series i to series j."""

    names: tuple[str, ...]
    theta: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.theta))

    def to_json(self, provenance: dict | None = None) -> dict:
        doc = {"names": list(self.names), "alpha": self.alpha.tolist()}
        if provenance is not None:
            doc["provenance"] = provenance
        return doc


@dataclass
class ForecasterBank:
    """Parameters of N forecasters stacked along the leading axis."""

    kernel: int
    window: int
    trend_weight: np.ndarray  # (N, d, w)
    remainder_weight: np.ndarray  # (N, d, w)
    head: np.ndarray  # (N, N, d): forecaster, input series, feature
    bias: np.ndarray  # (N,)

    @property
    def n(self) -> int:
        return self.head.shape[0]

    @classmethod
    def initialize(cls, n: int, rng: np.random.Generator, encoder: BackboneEncoder | None = None,
                   d: int = 64, window: int = 32, kernel: int = 25) -> "ForecasterBank":
        if encoder is None:
            encoder = BackboneEncoder.initialize(rng, d, window, kernel)
        d = encoder.d
        bound = 1.0 / np.sqrt(n * d)
        return cls(
            encoder.kernel,
            encoder.window,
            np.repeat(encoder.trend_weight[None], n, axis=0),
            np.repeat(encoder.remainder_weight[None], n, axis=0),
            rng.uniform(-bound, bound, size=(n, n, d)),
            np.zeros(n),
        )


@dataclass
class DiscoveryConfig:
    window: int = 32
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    theta_init_std: float = 0.01
    # attention sparsity weight and relaxed-Bernoulli masking during training;
    # sparsity=0, relaxed=False is the plain masked-MSE objective
    sparsity: float = 0.3
    relaxed: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if (self.window < 1 or self.batch_size < 1 or self.lr <= 0 or self.epochs < 0
                or self.sparsity < 0 or self.temperature <= 0):
            raise ValueError(f"invalid discovery config {self}")


@dataclass
class DiscoveryResult:
    bank: ForecasterBank
    attention: CausalAttentionMatrix
    loss_history: list[np.ndarray] = field(default_factory=list)  # per epoch, per forecaster


def masked_forecast(bank: ForecasterBank, alpha: np.ndarray, batch: WindowBatch) -> np.ndarray:
    """One-step forecasts, shape (B, N).

    Forecaster i sees ``[x_1 * alpha[0, i], ..., x_N * alpha[N-1, i]]``: every
    masked window is decomposed, encoded at its last timestamp and passed to
    the forecaster's linear head.
    """
    B, N, w = batch.inputs.shape
    if N != bank.n or w != bank.window or alpha.shape != (N, N):
        raise ShapeError(f"batch {batch.inputs.shape} / alpha {alpha.shape} do not match a bank of "
                         f"{bank.n} forecasters with window {bank.window}")
    masked = batch.inputs[None, :, :, :] * alpha.T[:, None, :, None]  # (Nf, B, N, w)
    k = effective_kernel(bank.kernel, w)
    trend = masked @ de.moving_average_matrix(w, k).T
    rem = masked - trend
    rep = trend @ np.swapaxes(bank.trend_weight, -1, -2)[:, None] + rem @ np.swapaxes(bank.remainder_weight, -1, -2)[:, None]
    out = np.einsum("fbnd,fnd->fb", rep, bank.head) + bank.bias[:, None]
    return out.T


def _decomposed(inputs: np.ndarray, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    w = inputs.shape[-1]
    trend = inputs @ de.moving_average_matrix(w, effective_kernel(kernel, w)).T
    return trend, inputs - trend


class _BankGraph:
    """Differentiable view of a ForecasterBank plus the attention logits.

    Decomposition is linear and the mask is a per-window scalar, so the
    decomposition of a masked window equals the mask times the decomposition
    of the raw window; the raw decomposition is computed once outside the
    graph and the head is folded into the backbone maps before touching the
    (batch x series x window) tensors.
    """

    def __init__(self, bank: ForecasterBank, theta_t: np.ndarray):
        self.params = {
            "theta_t": de.parameter(theta_t),  # (Nf, N): row i is attention column i
            "trend_weight": de.parameter(bank.trend_weight),
            "remainder_weight": de.parameter(bank.remainder_weight),
            "head": de.parameter(bank.head),
            "bias": de.parameter(bank.bias),
        }

    def predict(self, trend: np.ndarray, rem: np.ndarray, noise: np.ndarray | None = None,
                temperature: float = 1.0) -> de.Value:
        p = self.params
        nf, n = p["theta_t"].shape
        if noise is None:
            alpha = de.sigmoid(p["theta_t"])
        else:
            alpha = de.sigmoid(de.mul(de.add(de.reshape(p["theta_t"], (nf, 1, n)), noise), 1.0 / temperature))
        # (Nf, N, d) @ (Nf, d, w) -> per-forecaster, per-input-series filters
        v_trend = de.reshape(de.matmul(p["head"], p["trend_weight"]), (nf, 1, n, -1))
        v_rem = de.reshape(de.matmul(p["head"], p["remainder_weight"]), (nf, 1, n, -1))
        contrib = de.mul(trend[None], v_trend) + de.mul(rem[None], v_rem)  # (Nf, B, N, w)
        per_series = de.sum(contrib, axis=3)  # (Nf, B, N)
        if noise is None:
            alpha = de.reshape(alpha, (nf, 1, n))
        pred = de.sum(de.mul(per_series, alpha), axis=2)  # (Nf, B)
        return pred + de.reshape(p["bias"], (nf, 1))

    def losses(self, trend, rem, targets, noise=None, temperature=1.0) -> de.Value:
        return de.mse(self.predict(trend, rem, noise, temperature), targets.T, axis=1)

    def penalty(self, offdiag: np.ndarray) -> de.Value:
        """Per-forecaster mean off-diagonal attention, shape (Nf,)."""
        return de.sum(de.mul(de.sigmoid(self.params["theta_t"]), offdiag), axis=1)

    def export(self, kernel: int, window: int, names) -> tuple[ForecasterBank, CausalAttentionMatrix]:
        p = {k: v.data.copy() for k, v in self.params.items()}
        bank = ForecasterBank(kernel, window, p["trend_weight"], p["remainder_weight"], p["head"], p["bias"])
        return bank, CausalAttentionMatrix(tuple(names), p["theta_t"].T.copy())


def train_discovery(m: SeriesMatrix, cfg: DiscoveryConfig, rng: np.random.Generator,
                    init: BackboneEncoder | None = None, bank: ForecasterBank | None = None) -> DiscoveryResult:
    """Jointly fit every forecaster and its attention column.

    ``init`` seeds every forecaster's backbone (pretrained encoder); without
    it, a fresh backbone is drawn from ``rng``.
    """
    if m.T <= cfg.window:
        raise ShapeError(f"discovery needs T > window ({m.T} <= {cfg.window})")
    if init is not None and init.window != cfg.window:
        raise ShapeError(f"encoder window {init.window} != discovery window {cfg.window}")
    n = m.N
    if bank is None:
        bank = ForecasterBank.initialize(n, rng, encoder=init, window=cfg.window)
    theta_t = rng.normal(0.0, cfg.theta_init_std, size=(n, n))
    graph = _BankGraph(bank, theta_t)
    opt = de.Adam(graph.params, lr=cfg.lr)

    windows = sliding_windows(m, cfg.window)
    trend_all, rem_all = _decomposed(windows.inputs, bank.kernel)
    targets_all = windows.targets
    count = len(windows)
    offdiag = (1.0 - np.eye(n)) / max(n - 1, 1)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        sums = np.zeros(n)
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            noise = None
            if cfg.relaxed:
                u = rng.uniform(1e-12, 1.0 - 1e-12, size=(n, len(idx), n))
                noise = np.log(u) - np.log1p(-u)
            per_forecaster = graph.losses(trend_all[idx], rem_all[idx], targets_all[idx], noise, cfg.temperature)
            bad = ~np.isfinite(per_forecaster.data)
            if bad.any():
                raise NonFiniteError(f"non-finite forecasting loss at epoch {epoch + 1}, "
                                     f"forecaster {int(np.argmax(bad))}")
            total = de.sum(per_forecaster)
            if cfg.sparsity > 0:
                total = total + cfg.sparsity * de.sum(graph.penalty(offdiag))
            total.backward()
            opt.step()
            sums += per_forecaster.data * len(idx)
        history.append(sums / count)
        log.debug("discovery epoch %d: mean loss %.5f", epoch + 1, float(np.mean(sums / count)))
    bank, attention = graph.export(bank.kernel, bank.window, m.names)
    return DiscoveryResult(bank, attention, history)


def threshold_graph(attention: CausalAttentionMatrix, threshold: float = 0.5) -> CausalGraph:
    """Edge i -> j iff alpha[i, j] > threshold (strict) and i != j."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    alpha = attention.alpha
    names = attention.names
    edges = {(names[i], names[j]) for i, j in zip(*np.nonzero(alpha > threshold)) if i != j}
    return CausalGraph(names, edges)


def pearson(x, y) -> float:
    """Sample Pearson correlation; 0 when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"pearson: length mismatch {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeError("pearson needs at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def edge_similarities(g: CausalGraph, m: SeriesMatrix) -> dict[tuple[str, str], float]:
    return {(u, v): pearson(m.values[m.index(u)], m.values[m.index(v)]) for u, v in g.edges}


def prune_to_dag(g: CausalGraph, m: SeriesMatrix, removed: list | None = None) -> CausalGraph:
    """Drop the weakest cycle edge (by |Pearson r|) until no cycle remains.

    An edge lies on a cycle iff both endpoints share a strongly connected
    component, so only such edges are candidates.  Ties go to the edge that
    sorts first by (source, target) position.  Removed edges are appended to
    ``removed`` in order when a list is given.
    """
    sim = edge_similarities(g, m)
    order = {n: i for i, n in enumerate(g.nodes)}
    nxg = g.to_networkx()
    nxg.remove_edges_from(list(nx.selfloop_edges(nxg)))
    while True:
        comp = {}
        for cid, members in enumerate(nx.strongly_connected_components(nxg)):
            for node in members:
                comp[node] = cid
        on_cycle = [(u, v) for u, v in nxg.edges if comp[u] == comp[v]]
        if not on_cycle:
            break
        weakest = min(on_cycle, key=lambda e: (abs(sim[e]), order[e[0]], order[e[1]]))
        nxg.remove_edge(*weakest)
        if removed is not None:
            removed.append(weakest)
    kept = set(nxg.edges)
    return CausalGraph(g.nodes, kept, {e: sim[e] for e in kept})
