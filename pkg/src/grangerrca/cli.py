"""Command-line front end: one subcommand per stage plus the full pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .bench import BenchConfig, generate_suite, load_suite, pipeline_ranker, run_benchmark, write_suite
from .diagnosis import rank_root_causes
from .discovery import prune_to_dag, threshold_graph, train_discovery
from .encoder import BackboneEncoder, pretrain
from .errors import ConfigError, GrangerRCAError, IngestError, StageError
from .graphs import load_graph
from .pipeline import PipelineConfig, dump_json, provenance, run_pipeline, stage_rngs
from .series import ingest_csv, normalize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2  # argparse's own code for bad flags
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_STAGE = {"trigger": 5, "pretrain": 6, "discover": 7, "diagnose": 8, "synth": 9, "bench": 10, "write": 11}


class Failure(Exception):
    def __init__(self, code: int, stage: str, cause: BaseException):
        super().__init__(str(cause))
        self.code = code
        self.stage = stage
        self.cause = cause


def _fail(stage: str, exc: BaseException) -> Failure:
    if isinstance(exc, StageError):
        return Failure(EXIT_STAGE.get(exc.stage, EXIT_ERROR), exc.stage, exc.cause)
    if isinstance(exc, ConfigError):
        return Failure(EXIT_CONFIG, "config", exc)
    if isinstance(exc, (IngestError, OSError, json.JSONDecodeError)):
        return Failure(EXIT_INPUT, "input", exc)
    return Failure(EXIT_STAGE.get(stage, EXIT_ERROR), stage, exc)


def _config_from_args(args, base: PipelineConfig | None = None) -> PipelineConfig:
    """Flags that were given override ``base``; missing flags keep its values."""
    doc = asdict(base or PipelineConfig())
    if getattr(args, "config", None):
        saved = json.loads(Path(args.config).read_text())
        doc.update(saved.get("provenance", saved).get("config", {}))
    for key in doc:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "no_pretrain", False):
        doc["pretrain"] = False
    return PipelineConfig.from_dict(doc)


def _add_training_flags(p: argparse.ArgumentParser, epochs=True) -> None:
    p.add_argument("--window", type=int, help="forecast window w (32)")
    if epochs:
        p.add_argument("--epochs", type=int, help="training epochs (50)")
    p.add_argument("--lr", type=float, help="Adam learning rate (0.001)")
    p.add_argument("--batch", dest="batch_size", type=int, help="mini-batch size (128)")
    p.add_argument("--seed", type=int, help="root random seed (0)")


def _add_diagnosis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topk", type=int, help="number of candidates (5)")
    p.add_argument("--damping", type=float, help="PageRank damping (0.85)")
    p.add_argument("--pd", dest="p_dangling", type=float, help="weight of dangling nodes (1.0)")
    p.add_argument("--pn", dest="p_other", type=float, help="weight of other nodes (0.5)")
    p.add_argument("--include-trigger", dest="include_trigger", action="store_const", const=True,
                   help="keep the trigger itself among the candidates")
    p.add_argument("--scope", choices=["graph", "ancestors"], help="walk the whole graph or the trigger's ancestors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grangerrca", allow_abbrev=False,
                                     description="Root-cause ranking from multivariate time series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, allow_abbrev=False)

    p = add("pretrain", "contrastive pretraining of the encoder")
    p.add_argument("--input", required=True, help="CSV, one column per series")
    p.add_argument("--out", default=".", help="output directory (encoder.ckpt.json)")
    _add_training_flags(p)
    p.add_argument("--d", type=int, help="representation width (64)")
    p.add_argument("--kernel", type=int, help="moving-average kernel (25)")
    p.set_defaults(func=cmd_pretrain)

    p = add("discover", "train the forecasters and extract the causal graph")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=".", help="output directory")
    _add_training_flags(p)
    p.add_argument("--threshold", type=float, help="attention threshold H (0.5)")
    p.add_argument("--encoder", default="none", help="encoder checkpoint, or 'none' for a fresh backbone")
    p.add_argument("--sparsity", type=float, help="attention sparsity weight (0.3)")
    p.set_defaults(func=cmd_discover)

    p = add("diagnose", "rank root causes on a causal graph")
    p.add_argument("--graph", required=True, help="graph as JSON or DOT")
    p.add_argument("--trigger", required=True)
    _add_diagnosis_flags(p)
    p.add_argument("--out", help="write the ranking JSON here instead of stdout")
    p.set_defaults(func=cmd_diagnose)

    p = add("synth", "generate synthetic benchmark cases")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--timestamps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--out", required=True, help="suite directory")
    p.set_defaults(func=cmd_synth)

    p = add("bench", "score the pipeline on a synthetic suite")
    p.add_argument("--suite", help="suite directory from `synth`; generated in memory when omitted")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--timestamps", type=int, default=2000)
    p.add_argument("--no-pretrain", action="store_true")
    _add_training_flags(p)
    _add_diagnosis_flags(p)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_bench)

    p = add("pipeline", "pretrain, discover and diagnose in one run")
    p.add_argument("--input", required=True)
    p.add_argument("--trigger", required=True, help="trigger series name, or 'auto'")
    p.add_argument("--out", default="rca_out", help="artifact directory")
    p.add_argument("--no-pretrain", action="store_true")
    p.add_argument("--config", help="reuse the config embedded in an earlier output file")
    _add_training_flags(p)
    p.add_argument("--threshold", type=float)
    _add_diagnosis_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    m = ingest_csv(args.input)
    normed, _ = normalize(m)
    rngs = stage_rngs(cfg.seed)
    init = BackboneEncoder.initialize(rngs["init"], cfg.d, cfg.window, cfg.kernel)
    try:
        result = pretrain(normed, cfg.pretrain_config(), rngs["pretrain"], init=init)
    except Exception as exc:
        raise _fail("pretrain", exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "encoder.ckpt.json"
    result.encoder.save(path, meta={"provenance": provenance(cfg), "loss_history": result.loss_history,
                                    "alignment_history": result.alignment_history})
    print(json.dumps({"checkpoint": str(path), "loss_first": result.loss_history[0],
                      "loss_last": result.loss_history[-1]}))
    return EXIT_OK


def cmd_discover(args) -> int:
    cfg = _config_from_args(args)
    m = ingest_csv(args.input)
    normed, _ = normalize(m)
    rngs = stage_rngs(cfg.seed)
    if args.encoder.lower() == "none":
        init = BackboneEncoder.initialize(rngs["init"], cfg.d, cfg.window, cfg.kernel)
    else:
        init = BackboneEncoder.load(args.encoder)
    try:
        disc = train_discovery(normed, cfg.discovery_config(), rngs["discover"], init=init)
        raw = threshold_graph(disc.attention, cfg.threshold)
        removed: list = []
        dag = prune_to_dag(raw, normed, removed)
    except Exception as exc:
        raise _fail("discover", exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, encoder=args.encoder)
    dump_json(disc.attention.to_json(prov), out / "alpha.json")
    dump_json(raw.to_json(prov), out / "graph_raw.json")
    dag_doc = dag.to_json(prov)
    dag_doc["removed"] = [[u, v] for u, v in removed]
    dump_json(dag_doc, out / "graph_dag.json")
    (out / "graph_raw.dot").write_text(raw.to_dot("raw", provenance=prov))
    (out / "graph_dag.dot").write_text(dag.to_dot("dag", provenance=prov))
    print(json.dumps({"raw_edges": len(raw.edges), "dag_edges": len(dag.edges), "out": str(out)}))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config_from_args(args)
    g = load_graph(args.graph)
    try:
        ranking = rank_root_causes(g, args.trigger, k=cfg.topk, damping=cfg.damping, p_dangling=cfg.p_dangling,
                                   p_other=cfg.p_other, include_trigger=cfg.include_trigger, scope=cfg.scope)
    except Exception as exc:
        raise _fail("diagnose", exc)
    text = json.dumps(ranking.to_json(provenance(cfg)), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(ranking.table())
    else:
        sys.stdout.write(text)
        print(ranking.table(), file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = BenchConfig(nodes=args.nodes, cases=args.cases, timestamps=args.timestamps, seed=args.seed,
                      density=args.density)
    try:
        cfg.validate()
    except ValueError as exc:
        raise Failure(EXIT_CONFIG, "config", exc)
    try:
        paths = write_suite(generate_suite(cfg), args.out, cfg)
    except Exception as exc:
        raise _fail("synth", exc)
    print(json.dumps({"cases": len(paths), "out": args.out}))
    return EXIT_OK


def cmd_bench(args) -> int:
    base = BenchConfig().pipeline
    pcfg = _config_from_args(args, base)
    cfg = BenchConfig(nodes=args.nodes, cases=args.cases, timestamps=args.timestamps,
                      seed=pcfg.seed, pipeline=pcfg)
    try:
        cfg.validate()
    except ValueError as exc:
        raise Failure(EXIT_CONFIG, "config", exc)
    cases = load_suite(args.suite) if args.suite else None
    log = logging.getLogger("grangerrca.bench")

    def progress(i, case, ranking):
        log.info("case %d: truth %s, ranked %s", i, case.root_cause, ranking)

    try:
        report = run_benchmark(cfg, cases, pipeline_ranker(pcfg), progress)
    except Exception as exc:
        raise _fail("bench", exc)
    doc = report.to_json()
    if args.suite:
        doc["provenance"]["suite"] = str(args.suite)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(report.summary())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    m = ingest_csv(args.input)
    result = run_pipeline(m, args.trigger, cfg, args.out)
    print(result.ranking.table())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Failure as f:
        failure = f
    except GrangerRCAError as exc:
        failure = _fail(args.command, exc)
    except (OSError, ValueError, KeyError) as exc:
        failure = _fail(args.command, exc)
    reason = {"error": type(failure.cause).__name__, "stage": failure.stage, "message": str(failure.cause)}
    print(json.dumps(reason, sort_keys=True), file=sys.stderr)
    return failure.code


if __name__ == "__main__":
    sys.exit(main())
