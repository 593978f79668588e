"""End-to-end pipeline with a content-hashed artifact manifest.

Stages run in dependency order. A stage is skipped when the manifest holds
an entry with the same key (config sections + input hashes) and its
recorded outputs still exist with the recorded hashes.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from cpheno.config import RunConfig, resolve_path, save_config
from cpheno.errors import CphenoError, ConfigError, StageError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactPaths:
    """Artifact layout under the run's output root"""

    def __init__(self, root: str):
        self.root = root
        self.graph = os.path.join(root, "graph.jsonl")
        self.kg_report = os.path.join(root, "kg_report.json")
        self.pairs = os.path.join(root, "curation", "pairs.jsonl")
        self.curation_stats = os.path.join(root, "curation", "curation_stats.json")
        self.train_pairs = os.path.join(root, "split", "train_pairs.jsonl")
        self.bench_pairs = os.path.join(root, "split", "bench_pairs.jsonl")
        self.split_report = os.path.join(root, "split", "split_report.json")
        self.knowledge = os.path.join(root, "knowledge")
        self.vlp = os.path.join(root, "vlp")
        self.eval = os.path.join(root, "eval")


@dataclass
class RunContext:
    config: RunConfig
    paths: ArtifactPaths
    config_dir: Optional[str] = None

    def resolve(self, path: Optional[str]) -> Optional[str]:
        return resolve_path(path, self.config_dir)

    @property
    def corpus_root(self) -> Optional[str]:
        cur = self.config.curation
        if cur.corpus_root:
            return self.resolve(cur.corpus_root)
        corpus = self.resolve(cur.corpus_path)
        return os.path.dirname(os.path.abspath(corpus)) if corpus else None


@dataclass
class Stage:
    name: str
    sections: Sequence[str]
    inputs: Callable[[RunContext], List[str]]
    outputs: Callable[[RunContext], List[str]]
    run: Callable[[RunContext], None]


def _require(path: Optional[str], what: str) -> str:
    if not path:
        raise ConfigError(f"{what} is not configured")
    return path


def run_build_kg(ctx: RunContext):
    from cpheno.ontology import graph_statistics, parse_ontology, serialize_graph

    graph = parse_ontology(_require(ctx.resolve(ctx.config.ontology.obo_path), "ontology.obo_path"))
    serialize_graph(graph, ctx.paths.graph)
    with open(ctx.paths.kg_report, "w", encoding="utf-8") as f:
        json.dump(graph_statistics(graph), f, indent=2, sort_keys=True)


def run_curate(ctx: RunContext):
    from cpheno.corpus.curator import Curator, write_curation
    from cpheno.corpus.data_fetcher import DataFetcher
    from cpheno.ontology import load_graph

    cfg = ctx.config
    curation = cfg.curation
    corpus_path = _require(ctx.resolve(curation.corpus_path), "curation.corpus_path")
    if curation.keeplist_path:
        curation = _with(curation, keeplist_path=ctx.resolve(curation.keeplist_path))
    fetcher = DataFetcher(corpus_path, ctx.corpus_root)
    curator = Curator(
        load_graph(ctx.paths.graph),
        curation,
        root=fetcher.corpus_root,
        seed=cfg.stage_seed("curation"),
    )
    result = curator.curate(fetcher.fetch_articles())
    write_curation(result, ctx.paths.pairs)


def run_split(ctx: RunContext):
    from cpheno.corpus.records import load_pairs, save_pairs
    from cpheno.corpus.split import benchmark_split

    curation = ctx.config.curation
    split = benchmark_split(
        load_pairs(ctx.paths.pairs),
        holdout_ids=curation.holdout_ids or None,
        fraction=curation.holdout_fraction,
        seed=ctx.config.stage_seed("curation"),
    )
    save_pairs(ctx.paths.train_pairs, split.train)
    save_pairs(ctx.paths.bench_pairs, split.bench)
    with open(ctx.paths.split_report, "w", encoding="utf-8") as f:
        json.dump(split.report(), f, indent=2, sort_keys=True)


def run_train_knowledge(ctx: RunContext):
    from cpheno.models.text_encoder import TextEncoderHandle
    from cpheno.ontology import load_graph
    from cpheno.trainers.knowledge_trainer import train_knowledge_encoder

    cfg = ctx.config
    seed = cfg.stage_seed("knowledge")
    encoder = TextEncoderHandle.build(cfg.knowledge, seed)
    train_knowledge_encoder(
        cfg.knowledge,
        load_graph(ctx.paths.graph),
        encoder,
        out_dir=ctx.paths.knowledge,
        seed=seed,
        terminal_only=cfg.ontology.terminal_only,
    )


def run_train_vlp(ctx: RunContext):
    from cpheno.corpus.records import load_pairs
    from cpheno.models.teacher import TeacherHandle
    from cpheno.models.text_encoder import TextEncoderHandle
    from cpheno.models.vl_model import build_vl_model
    from cpheno.trainers.vlp_trainer import train_vlp

    cfg = ctx.config
    seed = cfg.stage_seed("vlp")
    teacher = TeacherHandle.load(ctx.paths.knowledge) if cfg.vlp.kd_enabled else None
    text_init = TextEncoderHandle.load(ctx.paths.knowledge) if cfg.vlp.init == "pretrained" else None
    model = build_vl_model(
        cfg.vlp,
        cfg.knowledge,
        text_init=text_init,
        teacher_dim=teacher.dim if teacher is not None else None,
        seed=seed,
    )
    train_vlp(
        cfg.vlp,
        load_pairs(ctx.paths.train_pairs),
        model,
        teacher,
        out_dir=ctx.paths.vlp,
        root=ctx.corpus_root,
        seed=seed,
    )


def run_evaluate(ctx: RunContext):
    from cpheno.corpus.records import load_pairs
    from cpheno.evaluation.evaluator import evaluate_model
    from cpheno.models.vl_model import VLModel
    from cpheno.ontology import load_graph

    cfg = ctx.config
    evaluation = cfg.evaluation
    if evaluation.templates_path:
        evaluation = _with(evaluation, templates_path=ctx.resolve(evaluation.templates_path))
    analyzer = evaluate_model(
        VLModel.load(ctx.paths.vlp),
        load_pairs(ctx.paths.bench_pairs),
        load_graph(ctx.paths.graph),
        evaluation,
        root=ctx.corpus_root,
        train_pairs=load_pairs(ctx.paths.train_pairs),
        seed=cfg.seed,
    )
    analyzer.save(ctx.paths.eval)
    if evaluation.plots:
        analyzer.plot_results(ctx.paths.eval)


def _with(section, **changes):
    return dataclasses.replace(section, **changes)


STAGES: List[Stage] = [
    Stage(
        "build-kg",
        ("ontology",),
        lambda c: [c.resolve(c.config.ontology.obo_path)],
        lambda c: [c.paths.graph, c.paths.kg_report],
        run_build_kg,
    ),
    Stage(
        "curate",
        ("curation",),
        lambda c: [c.paths.graph, c.resolve(c.config.curation.corpus_path), c.resolve(c.config.curation.keeplist_path)],
        lambda c: [c.paths.pairs, c.paths.curation_stats],
        run_curate,
    ),
    Stage(
        "split-bench",
        ("curation",),
        lambda c: [c.paths.pairs],
        lambda c: [c.paths.train_pairs, c.paths.bench_pairs],
        run_split,
    ),
    Stage(
        "train-knowledge",
        ("ontology", "knowledge"),
        lambda c: [c.paths.graph],
        lambda c: [os.path.join(c.paths.knowledge, "weights.pt"), os.path.join(c.paths.knowledge, "encoder.json")],
        run_train_knowledge,
    ),
    Stage(
        "train-vlp",
        ("knowledge", "vlp"),
        lambda c: [
            c.paths.train_pairs,
            os.path.join(c.paths.knowledge, "weights.pt"),
            os.path.join(c.paths.knowledge, "encoder.json"),
        ],
        lambda c: [os.path.join(c.paths.vlp, "model.pt"), os.path.join(c.paths.vlp, "model.json")],
        run_train_vlp,
    ),
    Stage(
        "evaluate",
        ("evaluation",),
        lambda c: [
            c.paths.bench_pairs,
            c.paths.train_pairs,
            c.paths.graph,
            os.path.join(c.paths.vlp, "model.pt"),
            os.path.join(c.paths.vlp, "model.json"),
        ],
        lambda c: [os.path.join(c.paths.eval, "results.json")],
        run_evaluate,
    ),
]


def _hashes(paths: Sequence[Optional[str]], root: str) -> Dict[str, str]:
    hashes = {}
    for path in paths:
        if not path:
            continue
        key = os.path.relpath(path, root) if os.path.abspath(path).startswith(os.path.abspath(root)) else path
        hashes[key] = file_sha256(path) if os.path.exists(path) else "missing"
    return hashes


def _stage_key(ctx: RunContext, stage: Stage, inputs: Dict[str, str]) -> str:
    payload = {
        "stage": stage.name,
        "config": ctx.config.section_hash(*stage.sections),
        "inputs": inputs,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def load_manifest(output_root: str) -> dict:
    path = os.path.join(output_root, MANIFEST)
    if not os.path.exists(path):
        return {"stages": {}}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _save_manifest(output_root: str, manifest: dict):
    with open(os.path.join(output_root, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode("utf-8")).hexdigest()


def run_pipeline(
    cfg: RunConfig,
    config_dir: Optional[str] = None,
    stages: Optional[Sequence[str]] = None,
    force: bool = False,
) -> dict:
    """
    Run every pipeline stage in dependency order

    Parameters:
        cfg (RunConfig): Run configuration; artifacts go to cfg.output_root
        config_dir (str): Directory relative config paths resolve against
        stages (list): Stage names to run, all when None
        force (bool): Re-run stages even when their outputs are current

    Returns:
        dict: The manifest, {"stages": {name: {"key", "inputs", "outputs"}}}

    Raises:
        StageError: A stage failed; the manifest of completed stages is kept
    """
    root = cfg.output_root
    os.makedirs(root, exist_ok=True)
    save_config(cfg, os.path.join(root, "config.yaml"))
    ctx = RunContext(cfg, ArtifactPaths(root), config_dir)
    manifest = load_manifest(root)
    previous = manifest.get("stages", {})
    manifest = {"stages": {}}

    wanted = set(stages) if stages else None
    for stage in STAGES:
        if wanted is not None and stage.name not in wanted:
            if stage.name in previous:
                manifest["stages"][stage.name] = previous[stage.name]
            continue

        inputs = _hashes(stage.inputs(ctx), root)
        key = _stage_key(ctx, stage, inputs)
        entry = previous.get(stage.name)
        if not force and entry and entry["key"] == key:
            current = _hashes(stage.outputs(ctx), root)
            if current == entry["outputs"] and "missing" not in current.values():
                logger.info(f"[{stage.name}] up to date, skipped")
                manifest["stages"][stage.name] = entry
                continue

        logger.info(f"[{stage.name}] running")
        try:
            stage.run(ctx)
        except CphenoError as e:
            _save_manifest(root, manifest)
            logger.error(f"[{stage.name}] failed: {e}")
            raise
        except Exception as e:
            _save_manifest(root, manifest)
            raise StageError(stage.name, f"{type(e).__name__}: {e}") from e

        outputs = _hashes(stage.outputs(ctx), root)
        missing = [p for p, h in outputs.items() if h == "missing"]
        if missing:
            _save_manifest(root, manifest)
            raise StageError(stage.name, f"expected outputs not written: {missing}")
        manifest["stages"][stage.name] = {"key": key, "inputs": inputs, "outputs": outputs}
        _save_manifest(root, manifest)

    _save_manifest(root, manifest)
    return manifest
