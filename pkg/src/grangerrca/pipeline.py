"""Three-stage root-cause analysis: pretrain, discover, diagnose."""
from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .detect import detect_trigger
from .diagnosis import RootCauseRanking, rank_root_causes
from .discovery import (CausalAttentionMatrix, DiscoveryConfig, prune_to_dag, threshold_graph,
                        train_discovery)
from .encoder import BackboneEncoder, PretrainConfig, PretrainResult, pretrain
from .errors import ConfigError, StageError, UnknownNode
from .graphs import CausalGraph
from .series import SeriesMatrix, normalize

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    window: int = 32
    threshold: float = 0.5
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 128
    p_dangling: float = 1.0
    p_other: float = 0.5
    topk: int = 5
    damping: float = 0.85
    seed: int = 0
    pretrain: bool = True
    d: int = 64
    kernel: int = 25
    crops_per_series: int = 32
    max_crop_length: int = 64
    sparsity: float = 0.3
    relaxed: bool = True
    temperature: float = 1.0
    include_trigger: bool = False
    scope: str = "graph"
    # only used for trigger="auto": leading fraction taken as normal
    normal_fraction: float = 0.75
    detect_smoothing: int = 1

    def validate(self) -> "PipelineConfig":
        problems = []
        for name in ("window", "epochs", "batch_size", "topk", "d", "kernel", "crops_per_series",
                     "max_crop_length", "detect_smoothing"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                problems.append(f"{name} must be an integer")
            elif value < (0 if name == "epochs" else 1):
                problems.append(f"{name} out of range: {value}")
        if not 0.0 <= self.threshold <= 1.0:
            problems.append("threshold must lie in [0, 1]")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if self.p_dangling <= 0 or self.p_other <= 0:
            problems.append("personalization weights must be positive")
        if not 0.0 < self.damping < 1.0:
            problems.append("damping must lie in (0, 1)")
        if self.kernel % 2 == 0 or self.kernel < 3:
            problems.append("kernel must be odd and >= 3")
        if self.sparsity < 0 or self.temperature <= 0:
            problems.append("sparsity must be >= 0 and temperature > 0")
        if self.scope not in ("graph", "ancestors"):
            problems.append(f"unknown scope {self.scope!r}")
        if not 0.0 < self.normal_fraction < 1.0:
            problems.append("normal_fraction must lie in (0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc).validate()

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                              crops_per_series=self.crops_per_series, d=self.d, kernel=self.kernel,
                              window=self.window, max_crop_length=self.max_crop_length)

    def discovery_config(self) -> DiscoveryConfig:
        return DiscoveryConfig(window=self.window, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                               sparsity=self.sparsity, relaxed=self.relaxed, temperature=self.temperature)


def provenance(cfg: PipelineConfig, **extra) -> dict:
    return {"config": asdict(cfg), "seed": cfg.seed, "version": __version__, **extra}


def stage_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per stage, all derived from one root seed.

    The encoder initialization has its own stream, so runs with and without
    pretraining start discovery from the same initial backbone weights.
    """
    init, pre, disc = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init), "pretrain": np.random.default_rng(pre),
            "discover": np.random.default_rng(disc)}


@dataclass
class PipelineResult:
    ranking: RootCauseRanking
    encoder: BackboneEncoder
    attention: CausalAttentionMatrix
    raw_graph: CausalGraph
    dag: CausalGraph
    removed: list[tuple[str, str]] = field(default_factory=list)
    pretrain_result: PretrainResult | None = None


def resolve_trigger(m: SeriesMatrix, trigger: str, cfg: PipelineConfig) -> str:
    if trigger == "auto":
        n_normal = max(1, min(m.T - 1, int(round(cfg.normal_fraction * m.T))))
        return detect_trigger(m, (1, n_normal), smooth=cfg.detect_smoothing)
    if trigger not in m.names:
        raise UnknownNode(trigger)
    return trigger


@contextmanager
def stage(name: str):
    """Re-raise any failure as a StageError tagged with ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(m: SeriesMatrix, trigger: str, cfg: PipelineConfig,
                 out_dir: str | Path | None = None) -> PipelineResult:
    """Run every stage on ``m`` and, when ``out_dir`` is given, write the artifacts.

    Config problems raise ConfigError before any stage starts; failures inside
    a stage raise StageError naming it.
    """
    cfg.validate()
    with stage("trigger"):
        trigger = resolve_trigger(m, trigger, cfg)
    rngs = stage_rngs(cfg.seed)
    normed, _ = normalize(m)
    encoder = BackboneEncoder.initialize(rngs["init"], cfg.d, cfg.window, cfg.kernel)
    pre = None
    if cfg.pretrain:
        with stage("pretrain"):
            pre = pretrain(normed, cfg.pretrain_config(), rngs["pretrain"], init=encoder)
        encoder = pre.encoder
    with stage("discover"):
        disc = train_discovery(normed, cfg.discovery_config(), rngs["discover"], init=encoder)
        raw = threshold_graph(disc.attention, cfg.threshold)
        removed: list[tuple[str, str]] = []
        dag = prune_to_dag(raw, normed, removed)
    with stage("diagnose"):
        ranking = rank_root_causes(dag, trigger, k=cfg.topk, damping=cfg.damping, p_dangling=cfg.p_dangling,
                                   p_other=cfg.p_other, include_trigger=cfg.include_trigger, scope=cfg.scope)
    result = PipelineResult(ranking, encoder, disc.attention, raw, dag, removed, pre)
    if out_dir is not None:
        with stage("write"):
            write_artifacts(result, cfg, out_dir)
    return result


def dump_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_artifacts(result: PipelineResult, cfg: PipelineConfig, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg)
    top = result.ranking.nodes[0] if result.ranking.ranking else None
    paths = {
        "encoder": out / "encoder.ckpt.json",
        "alpha": out / "alpha.json",
        "raw_dot": out / "graph_raw.dot",
        "raw_json": out / "graph_raw.json",
        "dag_dot": out / "graph_dag.dot",
        "dag_json": out / "graph_dag.json",
        "ranking": out / "ranking.json",
    }
    result.encoder.save(paths["encoder"], meta={"provenance": prov, "pretrained": cfg.pretrain})
    dump_json(result.attention.to_json(prov), paths["alpha"])
    dump_json(result.raw_graph.to_json(prov), paths["raw_json"])
    dag_doc = result.dag.to_json(prov)
    dag_doc["removed"] = [[u, v] for u, v in result.removed]
    dump_json(dag_doc, paths["dag_json"])
    trig = result.ranking.trigger
    paths["raw_dot"].write_text(result.raw_graph.to_dot("raw", trig, top, prov))
    paths["dag_dot"].write_text(result.dag.to_dot("dag", trig, top, prov))
    dump_json(result.ranking.to_json(prov), paths["ranking"])
    return paths
