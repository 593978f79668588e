import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import InvariantViolation
from cpheno.evaluation.encoders import as_encoder, normalize_rows
from cpheno.evaluation.metrics import (
    MatchingScores,
    matching_metrics,
    predicted_sets,
    recall_curve,
    usable_k,
)
from cpheno.evaluation.zero_shot import class_embeddings
from cpheno.ontology import PhenotypeGraph

logger = logging.getLogger(__name__)


@dataclass
class RetrievalReport:
    """Scores of one evaluation task; every metric lies in [0, 1]"""

    task: str
    metrics: Dict[str, float]
    n_queries: int
    k_values: List[int] = field(default_factory=list)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if not 0.0 <= value <= 1.0:
                raise InvariantViolation(f"{self.task} {name}={value} outside [0, 1]")
        recalls = [self.metrics[f"R@{k}"] for k in sorted(self.k_values) if f"R@{k}" in self.metrics]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise InvariantViolation(f"{self.task} R@K decreases in K: {recalls}")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metrics": dict(self.metrics),
            "n_queries": self.n_queries,
            "k_values": list(self.k_values),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "RetrievalReport":
        return cls(record["task"], record["metrics"], record["n_queries"], record.get("k_values", []))


def _readable_images(encoder, pairs: Sequence[ImageCaptionPair]) -> Tuple[np.ndarray, List[int]]:
    vectors, errors = encoder.encode_images([p.image_ref for p in pairs])
    keep = [i for i in range(len(pairs)) if i not in errors]
    if errors:
        logger.warning(f"{len(errors)} of {len(pairs)} benchmark images unreadable, left out")
    return normalize_rows(vectors[keep]) if keep else np.zeros((0, vectors.shape[1])), keep


def cross_modal_retrieval(
    model,
    pairs: Sequence[ImageCaptionPair],
    k_values: Sequence[int] = (10, 50),
    root: Optional[str] = None,
) -> Tuple[RetrievalReport, RetrievalReport]:
    """
    I2T and T2I retrieval over the paired captions

    The truth of every query is its own pair partner.
    """
    encoder = as_encoder(model, root)
    V, keep = _readable_images(encoder, pairs)
    T = normalize_rows(encoder.encode_texts([pairs[i].caption for i in keep]))
    S = V @ T.T
    n = len(keep)
    truth = [{i} for i in range(n)]
    ks = usable_k(k_values, n)
    i2t = RetrievalReport("i2t", recall_curve(S, truth, ks) if n else {}, n, ks)
    t2i = RetrievalReport("t2i", recall_curve(S.T, truth, ks) if n else {}, n, ks)
    return i2t, t2i


@dataclass
class PhenotypeScores:
    """Image x phenotype similarities of a benchmark"""

    S: np.ndarray
    phenotype_ids: List[str]
    image_truth: List[set]  # phenotype column indices per image row
    pair_ids: List[str]


def phenotype_similarity(
    model,
    pairs: Sequence[ImageCaptionPair],
    graph: PhenotypeGraph,
    templates=None,
    candidates: Optional[Sequence[str]] = None,
    root: Optional[str] = None,
) -> PhenotypeScores:
    """
    Cosine similarities between benchmark images and phenotype class embeddings

    Parameters:
        candidates (list): Phenotype ids of the gallery, by default every id
            linked to a benchmark pair
    """
    if candidates is None:
        candidates = sorted({tid for p in pairs for tid in p.phenotype_ids})
    candidates = list(candidates)
    names = [graph.term(tid).name for tid in candidates]
    for p in pairs:
        for tid in p.phenotype_ids:
            graph.term(tid)
    column = {tid: j for j, tid in enumerate(candidates)}

    encoder = as_encoder(model, root)
    V, keep = _readable_images(encoder, pairs)
    P = class_embeddings(encoder, names, templates) if candidates else np.zeros((0, V.shape[1]))
    truth = [{column[t] for t in pairs[i].phenotype_ids if t in column} for i in keep]
    return PhenotypeScores(V @ P.T, candidates, truth, [pairs[i].pair_id for i in keep])


def phenotype_retrieval(
    model,
    pairs: Sequence[ImageCaptionPair],
    graph: PhenotypeGraph,
    templates=None,
    k_values: Sequence[int] = (10, 50),
    hit_mode: str = "any",
    candidates: Optional[Sequence[str]] = None,
    root: Optional[str] = None,
    scores: Optional[PhenotypeScores] = None,
) -> Tuple[RetrievalReport, RetrievalReport]:
    """
    I2P and P2I retrieval against prompt-ensembled phenotype embeddings

    I2P queries every image against all candidate phenotypes; P2I queries
    every phenotype against all images and counts a hit when a linked image
    is retrieved. Phenotypes without linked images are not queried.
    """
    if scores is None:
        scores = phenotype_similarity(model, pairs, graph, templates, candidates, root)
    S = scores.S

    rows = [i for i, t in enumerate(scores.image_truth) if t]
    if len(rows) < len(scores.image_truth):
        logger.warning(f"I2P: {len(scores.image_truth) - len(rows)} images have no candidate phenotype")
    ks = usable_k(k_values, S.shape[1])
    i2p_metrics = recall_curve(S[rows], [scores.image_truth[i] for i in rows], ks, hit_mode) if rows else {}
    i2p = RetrievalReport("i2p", i2p_metrics, len(rows), ks)

    linked: Dict[int, set] = {}
    for i, phenotypes in enumerate(scores.image_truth):
        for j in phenotypes:
            linked.setdefault(j, set()).add(i)
    queries = sorted(linked)
    unlinked = S.shape[1] - len(queries)
    if unlinked:
        logger.info(f"P2I: {unlinked} phenotypes without linked images excluded")
    ks_p = usable_k(k_values, S.shape[0])
    p2i_metrics = recall_curve(S.T[queries], [linked[j] for j in queries], ks_p) if queries else {}
    p2i = RetrievalReport("p2i", p2i_metrics, len(queries), ks_p)
    return i2p, p2i


def phenotype_matching(
    scores: PhenotypeScores,
    k: Optional[int] = None,
    average: str = "micro",
) -> MatchingScores:
    """
    Precision / recall / F1 of the top-K phenotypes of every image

    K defaults to the size of each image's truth set.
    """
    sizes = k if k is not None else [len(t) for t in scores.image_truth]
    predicted = predicted_sets(scores.S, sizes, list(range(len(scores.phenotype_ids))))
    return matching_metrics(
        dict(enumerate(predicted)),
        dict(enumerate(scores.image_truth)),
        average,
    )
