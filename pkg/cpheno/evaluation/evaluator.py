import logging
from typing import List, Optional, Sequence

import numpy as np

from cpheno.config import EvalConfig
from cpheno.corpus.records import ImageCaptionPair
from cpheno.evaluation.analyzer import Analyzer
from cpheno.evaluation.encoders import as_encoder
from cpheno.evaluation.probe import linear_probe, probe_sets_from_pairs
from cpheno.evaluation.prompts import PromptTemplateSet
from cpheno.evaluation.retrieval import (
    RetrievalReport,
    cross_modal_retrieval,
    phenotype_matching,
    phenotype_retrieval,
    phenotype_similarity,
)
from cpheno.evaluation.zero_shot import zero_shot_classify
from cpheno.ontology import PhenotypeGraph

logger = logging.getLogger(__name__)


def _zero_shot_report(encoder, pairs, graph, templates) -> Optional[RetrievalReport]:
    single = [p for p in pairs if len(p.phenotype_ids) == 1]
    if not single:
        logger.warning("Zero-shot: no single-phenotype images, task skipped")
        return None
    class_ids = sorted({p.phenotype_ids[0] for p in single})
    index = {tid: c for c, tid in enumerate(class_ids)}
    result = zero_shot_classify(
        encoder,
        [p.image_ref for p in single],
        [graph.term(tid).name for tid in class_ids],
        templates,
        labels=[index[p.phenotype_ids[0]] for p in single],
    )
    return RetrievalReport("zs", {"accuracy": result.accuracy}, len(single) - result.skipped)


def _probe_report(encoder, pairs, train_pairs, config: EvalConfig, seed: int) -> Optional[RetrievalReport]:
    if train_pairs is None:
        # half of the benchmark trains the probe, the other half tests it
        order = np.random.default_rng(seed).permutation(len(pairs))
        half = len(pairs) // 2
        train_pairs = [pairs[i] for i in sorted(order[:half])]
        pairs = [pairs[i] for i in sorted(order[half:])]
    train, test = probe_sets_from_pairs(encoder, train_pairs, pairs)
    if len(train) == 0 or len(test) == 0:
        logger.warning("Linear probe: empty train or test set, task skipped")
        return None
    metrics = {}
    for ratio in config.probe_ratios:
        result = linear_probe(
            train,
            test,
            ratio,
            seed,
            weight_decay=config.probe_weight_decay,
            max_iter=config.probe_max_iter,
        )
        metrics[f"acc@{ratio:.0%}"] = result.accuracy
    return RetrievalReport("probe", metrics, len(test))


def evaluate_model(
    model,
    pairs: Sequence[ImageCaptionPair],
    graph: PhenotypeGraph,
    config: EvalConfig,
    root: Optional[str] = None,
    train_pairs: Optional[Sequence[ImageCaptionPair]] = None,
    seed: int = 0,
    name: str = "model",
) -> Analyzer:
    """
    Run the configured evaluation tasks on a benchmark

    Parameters:
        model: VLModel or an encoder exposing encode_images / encode_texts
        pairs (list): Benchmark pairs
        graph (PhenotypeGraph): Names of the phenotype classes
        config (EvalConfig): Tasks, K values, hit mode, matching and probe settings
        root (str): Corpus root of relative image references
        train_pairs (list): Probe training pairs, half of the benchmark when None
        seed (int): Seed of the probe subsampling
    """
    encoder = as_encoder(model, root)
    templates = (
        PromptTemplateSet.load(config.templates_path)
        if config.templates_path
        else PromptTemplateSet.default()
    )
    pairs = list(pairs)
    tasks = set(config.tasks)
    reports: List[RetrievalReport] = []
    logger.info(f"Evaluating {len(pairs)} pairs on tasks {sorted(tasks)}")

    if "zs" in tasks:
        report = _zero_shot_report(encoder, pairs, graph, templates)
        if report is not None:
            reports.append(report)
    if tasks & {"i2t", "t2i"}:
        i2t, t2i = cross_modal_retrieval(encoder, pairs, config.k_values)
        reports.extend(r for r in (i2t, t2i) if r.task in tasks)
    if tasks & {"i2p", "p2i", "match"}:
        scores = phenotype_similarity(encoder, pairs, graph, templates)
        if tasks & {"i2p", "p2i"}:
            i2p, p2i = phenotype_retrieval(
                encoder, pairs, graph, k_values=config.k_values, hit_mode=config.hit_mode, scores=scores
            )
            reports.extend(r for r in (i2p, p2i) if r.task in tasks)
        if "match" in tasks:
            matching = phenotype_matching(scores, config.matching_k, config.average)
            reports.append(RetrievalReport("match", matching.to_dict(), matching.n_images))
    if "probe" in tasks:
        report = _probe_report(encoder, pairs, train_pairs, config, seed)
        if report is not None:
            reports.append(report)
    return Analyzer(reports, name)
