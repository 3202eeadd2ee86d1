"""Synthetic benchmark: generate a suite, run the pipeline on every case, score it."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .graphs import CausalGraph
from .metrics import hr_at_k, mrr, rank_of
from .pipeline import PipelineConfig, run_pipeline
from .series import SeriesMatrix, ingest_csv
from .synth import SynthCase, generate_dag, sample_case

log = logging.getLogger(__name__)

KS = (1, 3, 5)


@dataclass
class BenchConfig:
    nodes: int = 10
    cases: int = 50
    timestamps: int = 2000
    seed: int = 0
    density: float = 0.3
    anomaly_fraction: float = 0.25
    concentration: float = 1.0
    fault_strength: float = 5.0
    pipeline: PipelineConfig = field(default_factory=lambda: PipelineConfig(include_trigger=True, scope="ancestors"))

    def validate(self) -> "BenchConfig":
        if self.nodes < 2 or self.cases < 1 or self.timestamps < 100:
            raise ValueError("need nodes >= 2, cases >= 1 and timestamps >= 100")
        self.pipeline.validate()
        return self


@dataclass
class LoadedCase:
    """A benchmark unit as stored on disk: the series plus its ground truth."""

    name: str
    series: SeriesMatrix
    root_cause: str
    trigger: str
    dag: CausalGraph | None = None


@dataclass
class EvalReport:
    ranks: list[int | None]
    rankings: list[list[str]]
    truths: list[str]
    config: dict
    baseline_ranks: list[int | None] = field(default_factory=list)
    baseline_rankings: list[list[str]] = field(default_factory=list)

    @property
    def cases(self) -> int:
        return len(self.truths)

    def hr(self, k: int) -> float:
        return hr_at_k(self.rankings, self.truths, k)

    @property
    def mrr(self) -> float:
        return mrr(self.rankings, self.truths)

    def baseline_hr(self, k: int) -> float:
        return hr_at_k(self.baseline_rankings, self.truths, k)

    @property
    def baseline_mrr(self) -> float:
        return mrr(self.baseline_rankings, self.truths)

    def to_json(self) -> dict:
        return {
            "cases": self.cases,
            "hr": {f"HR@{k}": self.hr(k) for k in KS},
            "mrr": self.mrr,
            "ranks": self.ranks,
            "baseline": {
                "hr": {f"HR@{k}": self.baseline_hr(k) for k in KS},
                "mrr": self.baseline_mrr,
                "ranks": self.baseline_ranks,
            },
            "provenance": {"config": self.config, "version": __version__},
        }

    def summary(self) -> str:
        rows = [f"{'':<10}{'HR@1':>8}{'HR@3':>8}{'HR@5':>8}{'MRR':>8}"]
        rows.append(f"{'pipeline':<10}" + "".join(f"{self.hr(k):>8.3f}" for k in KS) + f"{self.mrr:>8.3f}")
        if self.baseline_rankings:
            rows.append(f"{'random':<10}" + "".join(f"{self.baseline_hr(k):>8.3f}" for k in KS)
                        + f"{self.baseline_mrr:>8.3f}")
        rows.append(f"cases: {self.cases}")
        return "\n".join(rows)


def generate_suite(cfg: BenchConfig) -> list[SynthCase]:
    """Cases are seeded independently, so case i does not depend on the suite size."""
    out = []
    for seq in np.random.SeedSequence(cfg.seed).spawn(cfg.cases):
        rng = np.random.default_rng(seq)
        dag = generate_dag(cfg.nodes, cfg.density, rng)
        out.append(sample_case(dag, rng, T=cfg.timestamps, anomaly_fraction=cfg.anomaly_fraction,
                               concentration=cfg.concentration, fault_strength=cfg.fault_strength))
    return out


def write_suite(cases: list[SynthCase], directory: str | Path, cfg: BenchConfig | None = None) -> list[Path]:
    prov = {"version": __version__}
    if cfg is not None:
        prov["config"] = _config_dict(cfg)
    return [case.save(directory, f"case_{i:03d}", prov)[0] for i, case in enumerate(cases)]


def load_suite(directory: str | Path) -> list[LoadedCase]:
    """Read every ``*.csv`` with a sibling ``*.truth.json`` in name order."""
    directory = Path(directory)
    cases = []
    for csv_path in sorted(directory.glob("*.csv")):
        truth_path = csv_path.with_suffix(".truth.json")
        if not truth_path.exists():
            log.warning("skipping %s: no ground truth file", csv_path.name)
            continue
        truth = json.loads(truth_path.read_text())
        dag = None
        if "edges" in truth:
            dag = CausalGraph(tuple(truth["nodes"]), {(u, v) for u, v in truth["edges"]})
        cases.append(LoadedCase(csv_path.stem, ingest_csv(csv_path), truth["root_cause"], truth["trigger"], dag))
    if not cases:
        raise FileNotFoundError(f"no benchmark cases in {directory}")
    return cases


def _config_dict(cfg: BenchConfig) -> dict:
    return asdict(cfg)


def random_rankings(cases, seed: int) -> list[list[str]]:
    """Uniformly random permutation of every case's nodes, seeded per case."""
    out = []
    for case, seq in zip(cases, np.random.SeedSequence([seed, 1]).spawn(len(cases))):
        names = list(case.series.names)
        perm = np.random.default_rng(seq).permutation(len(names))
        out.append([names[i] for i in perm])
    return out


def pipeline_ranker(cfg: PipelineConfig) -> Callable:
    def rank(case, index: int) -> list[str]:
        case_cfg = PipelineConfig(**{**asdict(cfg), "seed": cfg.seed + index})
        return run_pipeline(case.series, case.trigger, case_cfg).ranking.nodes
    return rank


def run_benchmark(cfg: BenchConfig, cases=None, ranker: Callable | None = None,
                  progress: Callable | None = None) -> EvalReport:
    """Score ``ranker(case, index) -> list of names`` on every case.

    Cases are generated from ``cfg`` unless given.  The default ranker is the
    full pipeline with seed ``cfg.pipeline.seed + index``.
    """
    cfg.validate()
    if cases is None:
        cases = generate_suite(cfg)
    ranker = ranker or pipeline_ranker(cfg.pipeline)
    rankings, truths = [], []
    for i, case in enumerate(cases):
        ranking = list(ranker(case, i))
        rankings.append(ranking)
        truths.append(case.root_cause)
        if progress is not None:
            progress(i, case, ranking)
    baseline = random_rankings(cases, cfg.seed)
    return EvalReport(
        ranks=[rank_of(r, t) for r, t in zip(rankings, truths)],
        rankings=rankings,
        truths=truths,
        config=_config_dict(cfg),
        baseline_ranks=[rank_of(r, t) for r, t in zip(baseline, truths)],
        baseline_rankings=baseline,
    )
