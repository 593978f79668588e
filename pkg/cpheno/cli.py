import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from cpheno.config import RunConfig, load_config, resolve_path, save_config
from cpheno.errors import CphenoError, StageError

logger = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser, config_required: bool = False):
    parser.add_argument(
        "-c",
        "--config",
        required=config_required,
        help="YAML run configuration",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value, e.g. --set vlp.alpha=0.5 (repeatable)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Global seed, overrides the config",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpheno",
        description="Phenotype knowledge graph, figure curation and knowledge-enhanced vision-language pretraining",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kg", help="Parse an OBO ontology into a phenotype graph")
    p.add_argument("--ontology", required=True, help="OBO file")
    p.add_argument("--out", required=True, help="Graph JSONL to write")
    p.add_argument("--report", help="Write graph statistics JSON here")
    _common(p)

    p = sub.add_parser("curate", help="Curate image-caption pairs from an article corpus")
    p.add_argument("--corpus", required=True, help="Article corpus JSONL")
    p.add_argument("--graph", required=True, help="Graph JSONL from build-kg")
    p.add_argument("--keeplist", help="Cluster keep-list; no filtering when omitted")
    p.add_argument("--out", required=True, help="Pairs JSONL to write")
    p.add_argument("--root", help="Directory of relative image paths (default: corpus directory)")
    p.add_argument("--mock-llm", action="store_true", help="Use the offline rule-based clients")
    p.add_argument("--no-split", action="store_true", help="Keep compound figures whole")
    p.add_argument("--no-curation", action="store_true", help="Keep raw matched figure-caption pairs")
    p.add_argument("--workers", type=int, help="Articles processed in parallel")
    _common(p)

    p = sub.add_parser("split-bench", help="Hold out articles as the benchmark")
    p.add_argument("--pairs", required=True, help="Curated pairs JSONL")
    p.add_argument("--holdout", help="Fraction, file of PMCIDs, or comma-separated PMCIDs")
    p.add_argument("--out", help="Output directory (default: next to the pairs file)")
    _common(p)

    p = sub.add_parser("train-knowledge", help="Stage 1: train the knowledge encoder")
    p.add_argument("--graph", required=True, help="Graph JSONL from build-kg")
    p.add_argument("--out", required=True, help="Checkpoint directory")
    _common(p)

    p = sub.add_parser("train-vlp", help="Stage 2: knowledge-enhanced vision-language pretraining")
    p.add_argument("--pairs", required=True, help="Training pairs JSONL")
    p.add_argument("--teacher", required=True, help="Knowledge encoder checkpoint, or 'none'")
    p.add_argument("--out", required=True, help="Checkpoint directory")
    p.add_argument("--root", help="Directory of relative image paths (default: pairs directory)")
    p.add_argument("--no-kd", action="store_true", help="Disable knowledge distillation")
    p.add_argument("--alpha", type=float, help="Weight of the distillation loss")
    _common(p)

    p = sub.add_parser("evaluate", help="Zero-shot, retrieval, matching and probing evaluation")
    p.add_argument("--model", required=True, help="VLP checkpoint directory")
    p.add_argument("--pairs", required=True, help="Benchmark pairs JSONL")
    p.add_argument("--graph", required=True, help="Graph JSONL from build-kg")
    p.add_argument("--train-pairs", help="Probe training pairs (default: half of the benchmark)")
    p.add_argument("--tasks", help="Comma-separated tasks: zs,i2t,t2i,i2p,p2i,match,probe")
    p.add_argument("--k", help="Comma-separated K values of R@K")
    p.add_argument("--root", help="Directory of relative image paths (default: pairs directory)")
    p.add_argument("--out", required=True, help="Result directory")
    _common(p)

    p = sub.add_parser("run", help="Run the full pipeline")
    p.add_argument("--force", action="store_true", help="Re-run stages even when up to date")
    p.add_argument("--stages", help="Comma-separated subset of stages")
    _common(p, config_required=True)

    p = sub.add_parser("ablate", help="Run the training-component ablation grid")
    p.add_argument("--grid", default="kd=on,off;curation=on,off", help="e.g. 'kd=on,off;init=scratch,pretrained'")
    p.add_argument("--workers", type=int, default=1, help="Cells run in parallel processes")
    _common(p, config_required=True)
    return parser


def _config(args, extra: Optional[List[str]] = None) -> RunConfig:
    overrides = list(extra or []) + list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _config_dir(args) -> Optional[str]:
    return os.path.dirname(os.path.abspath(args.config)) if args.config else None


def cmd_build_kg(args) -> int:
    from cpheno.ontology import graph_statistics, parse_ontology, serialize_graph

    graph = parse_ontology(args.ontology)
    serialize_graph(graph, args.out)
    stats = graph_statistics(graph)
    logger.info(
        f"Wrote {stats['nodes']} terms, {stats['edges']} edges, "
        f"{stats['terminal_phenotypes']} terminal phenotypes to {args.out}"
    )
    if args.report:
        os.makedirs(os.path.dirname(os.path.abspath(args.report)), exist_ok=True)
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(stats, f, indent=2, sort_keys=True)
    return 0


def cmd_curate(args) -> int:
    from cpheno.corpus.curator import Curator, write_curation
    from cpheno.corpus.data_fetcher import DataFetcher
    from cpheno.ontology import load_graph

    extra = []
    if args.mock_llm:
        extra.append("curation.mock_llm=true")
    if args.no_split:
        extra.append("curation.split_subfigures=false")
    if args.no_curation:
        extra.append("curation.enabled=false")
    if args.workers:
        extra.append(f"curation.workers={args.workers}")
    cfg = _config(args, extra)
    curation = cfg.curation
    if args.keeplist:
        curation.keeplist_path = args.keeplist
    else:
        curation.keeplist_path = resolve_path(curation.keeplist_path, _config_dir(args))

    fetcher = DataFetcher(args.corpus, args.root)
    curator = Curator(load_graph(args.graph), curation, fetcher.corpus_root, seed=cfg.stage_seed("curation"))
    result = curator.curate(fetcher.fetch_articles())
    paths = write_curation(result, args.out)
    print(json.dumps(result.stats, indent=2, sort_keys=True))
    logger.info(f"Wrote {len(result.pairs)} pairs to {paths['pairs']}")
    return 0


def cmd_split_bench(args) -> int:
    from cpheno.corpus.records import load_pairs, save_pairs
    from cpheno.corpus.split import benchmark_split, parse_holdout

    cfg = _config(args)
    holdout_ids, fraction = cfg.curation.holdout_ids or None, cfg.curation.holdout_fraction
    if args.holdout:
        value = parse_holdout(args.holdout)
        if isinstance(value, float):
            holdout_ids, fraction = None, value
        else:
            holdout_ids = value
    split = benchmark_split(load_pairs(args.pairs), holdout_ids, fraction, cfg.stage_seed("curation"))
    out_dir = args.out or os.path.dirname(os.path.abspath(args.pairs))
    save_pairs(os.path.join(out_dir, "train_pairs.jsonl"), split.train)
    save_pairs(os.path.join(out_dir, "bench_pairs.jsonl"), split.bench)
    with open(os.path.join(out_dir, "split_report.json"), "w", encoding="utf-8") as f:
        json.dump(split.report(), f, indent=2, sort_keys=True)
    print(json.dumps(split.report(), indent=2, sort_keys=True))
    return 0


def cmd_train_knowledge(args) -> int:
    from cpheno.models.text_encoder import TextEncoderHandle
    from cpheno.ontology import load_graph
    from cpheno.trainers.knowledge_trainer import train_knowledge_encoder

    cfg = _config(args)
    seed = cfg.stage_seed("knowledge")
    encoder = TextEncoderHandle.build(cfg.knowledge, seed)
    _, history = train_knowledge_encoder(
        cfg.knowledge,
        load_graph(args.graph),
        encoder,
        out_dir=args.out,
        seed=seed,
        terminal_only=cfg.ontology.terminal_only,
    )
    save_config(cfg, os.path.join(args.out, "config.yaml"))
    logger.info(f"Stage 1 finished after {len(history)} steps, final loss {history.final_loss}")
    return 0


def cmd_train_vlp(args) -> int:
    from cpheno.corpus.records import load_pairs
    from cpheno.models.teacher import TeacherHandle
    from cpheno.models.text_encoder import TextEncoderHandle
    from cpheno.models.vl_model import build_vl_model
    from cpheno.trainers.vlp_trainer import train_vlp

    extra = []
    if args.no_kd or args.teacher.lower() == "none":
        extra.append("vlp.kd_enabled=false")
    if args.alpha is not None:
        extra.append(f"vlp.alpha={args.alpha}")
    cfg = _config(args, extra)
    seed = cfg.stage_seed("vlp")

    has_teacher = args.teacher.lower() != "none"
    teacher = TeacherHandle.load(args.teacher) if has_teacher and cfg.vlp.kd_enabled else None
    text_init = TextEncoderHandle.load(args.teacher) if has_teacher and cfg.vlp.init == "pretrained" else None
    model = build_vl_model(
        cfg.vlp,
        cfg.knowledge,
        text_init=text_init,
        teacher_dim=teacher.dim if teacher is not None else None,
        seed=seed,
    )
    root = args.root or os.path.dirname(os.path.abspath(args.pairs))
    _, history = train_vlp(cfg.vlp, load_pairs(args.pairs), model, teacher, args.out, root, seed)
    save_config(cfg, os.path.join(args.out, "config.yaml"))
    logger.info(f"Stage 2 finished after {len(history)} steps, final loss {history.final_loss}")
    return 0


def cmd_evaluate(args) -> int:
    from cpheno.corpus.records import load_pairs
    from cpheno.evaluation.evaluator import evaluate_model
    from cpheno.models.vl_model import VLModel
    from cpheno.ontology import load_graph

    extra = []
    if args.tasks:
        extra.append(f"evaluation.tasks=[{args.tasks}]")
    if args.k:
        extra.append(f"evaluation.k_values=[{args.k}]")
    cfg = _config(args, extra)
    cfg.evaluation.templates_path = resolve_path(cfg.evaluation.templates_path, _config_dir(args))
    analyzer = evaluate_model(
        VLModel.load(args.model),
        load_pairs(args.pairs),
        load_graph(args.graph),
        cfg.evaluation,
        root=args.root or os.path.dirname(os.path.abspath(args.pairs)),
        train_pairs=load_pairs(args.train_pairs) if args.train_pairs else None,
        seed=cfg.seed,
    )
    analyzer.print_summary()
    analyzer.save(args.out)
    if cfg.evaluation.plots:
        analyzer.plot_results(args.out)
    return 0


def cmd_run(args) -> int:
    from cpheno.evaluation.analyzer import Analyzer
    from cpheno.pipeline import run_pipeline

    cfg = _config(args)
    stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
    manifest = run_pipeline(cfg, _config_dir(args), stages, args.force)
    results = os.path.join(cfg.output_root, "eval", "results.json")
    if os.path.exists(results):
        Analyzer.load(results).print_summary()
    logger.info(f"Manifest: {os.path.join(cfg.output_root, 'manifest.json')} ({len(manifest['stages'])} stages)")
    return 0


def cmd_ablate(args) -> int:
    from cpheno.ablation import parse_grid, run_ablations

    cfg = _config(args)
    table = run_ablations(cfg, parse_grid(args.grid), _config_dir(args), args.workers)
    print(table.to_string(index=False))
    return 0


COMMANDS = {
    "build-kg": cmd_build_kg,
    "curate": cmd_curate,
    "split-bench": cmd_split_bench,
    "train-knowledge": cmd_train_knowledge,
    "train-vlp": cmd_train_vlp,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except CphenoError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed")
        return StageError(args.command, str(e)).exit_code


if __name__ == "__main__":
    sys.exit(main())
