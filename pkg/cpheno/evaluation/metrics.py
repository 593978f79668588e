"""Ranking and set-matching metrics over precomputed similarity matrices.

Rankings sort by descending similarity; equal scores keep the lower
gallery index first.
"""

import logging
from dataclasses import dataclass
from typing import Collection, Dict, Hashable, List, Mapping, Sequence, Union

import numpy as np

from cpheno.errors import ParameterError, PreconditionError

logger = logging.getLogger(__name__)

Truth = Union[Sequence[Collection[int]], Mapping[int, Collection[int]]]

HIT_MODES = ("any", "all")


def rank_gallery(S: np.ndarray) -> np.ndarray:
    """Gallery indices per query row, best first"""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ParameterError(f"similarity matrix must be 2-D, got shape {S.shape}")
    return np.argsort(-S, axis=1, kind="stable")


def _truth_rows(truth: Truth, n_queries: int) -> List[set]:
    if isinstance(truth, Mapping):
        missing = [q for q in range(n_queries) if q not in truth]
        if missing:
            raise PreconditionError(f"no truth set for queries {missing[:5]}")
        rows = [set(truth[q]) for q in range(n_queries)]
    else:
        rows = [set(t) for t in truth]
        if len(rows) != n_queries:
            raise PreconditionError(f"{len(rows)} truth sets for {n_queries} queries")
    for q, row in enumerate(rows):
        if not row:
            raise PreconditionError(f"empty truth set for query {q}")
    return rows


def retrieval_recall_at_k(S: np.ndarray, truth: Truth, k: int, hit_mode: str = "any") -> float:
    """
    Fraction of queries whose top-k gallery items hit the truth set

    Parameters:
        S (np.ndarray): Q x G similarity matrix
        truth: Per-query sets of relevant gallery indices
        k (int): Cut-off, 1 <= k <= G
        hit_mode (str): "any" (intersects the truth set) or "all" (covers it)
    """
    S = np.asarray(S, dtype=np.float64)
    if hit_mode not in HIT_MODES:
        raise ParameterError(f"unknown hit mode: {hit_mode}")
    n_queries, n_gallery = S.shape if S.ndim == 2 else (0, 0)
    if not 1 <= k <= n_gallery:
        raise ParameterError(f"k={k} outside [1, {n_gallery}]")
    rows = _truth_rows(truth, n_queries)
    if n_queries == 0:
        return 0.0

    top = rank_gallery(S)[:, :k]
    hits = 0
    for q in range(n_queries):
        retrieved = set(top[q].tolist())
        if hit_mode == "any":
            hits += bool(retrieved & rows[q])
        else:
            hits += rows[q] <= retrieved
    return hits / n_queries


def recall_curve(S: np.ndarray, truth: Truth, k_values: Sequence[int], hit_mode: str = "any") -> Dict[str, float]:
    """R@K for every k in k_values, keyed "R@k" """
    return {f"R@{k}": retrieval_recall_at_k(S, truth, k, hit_mode) for k in k_values}


def usable_k(k_values: Sequence[int], n_gallery: int) -> List[int]:
    kept = [k for k in k_values if 1 <= k <= n_gallery]
    dropped = [k for k in k_values if k not in kept]
    if dropped:
        logger.warning(f"Skipping R@K for k={dropped}: gallery holds only {n_gallery} items")
    return kept


def predicted_sets(S: np.ndarray, sizes: Union[int, Sequence[int]], gallery_ids: Sequence[Hashable]) -> List[set]:
    """Predicted id sets: the top sizes[q] gallery ids of every query row"""
    order = rank_gallery(S)
    if isinstance(sizes, int):
        sizes = [sizes] * order.shape[0]
    return [{gallery_ids[j] for j in order[q, : sizes[q]]} for q in range(order.shape[0])]


@dataclass
class MatchingScores:
    precision: float
    recall: float
    f1: float
    n_images: int
    average: str = "micro"

    def to_dict(self) -> Dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def matching_metrics(
    topk_sets: Mapping[Hashable, Collection],
    truth_sets: Mapping[Hashable, Collection],
    average: str = "micro",
) -> MatchingScores:
    """
    Set-based precision, recall and F1 of predicted phenotype sets

    Micro averaging pools the counts over images; macro averages the
    per-image scores. Images with an empty truth set are excluded.
    """
    if average not in ("micro", "macro"):
        raise ParameterError(f"unknown average: {average}")
    images = [i for i in truth_sets if truth_sets[i]]
    excluded = len(truth_sets) - len(images)
    if excluded:
        logger.warning(f"Excluding {excluded} images with an empty truth set")
    if not images:
        return MatchingScores(0.0, 0.0, 0.0, 0, average)

    overlap, n_pred, n_truth = [], [], []
    for image in images:
        pred = set(topk_sets.get(image, ()))
        truth = set(truth_sets[image])
        overlap.append(len(pred & truth))
        n_pred.append(len(pred))
        n_truth.append(len(truth))

    if average == "micro":
        precision = sum(overlap) / sum(n_pred) if sum(n_pred) else 0.0
        recall = sum(overlap) / sum(n_truth)
        return MatchingScores(precision, recall, _f1(precision, recall), len(images), average)

    per_p = [o / p if p else 0.0 for o, p in zip(overlap, n_pred)]
    per_r = [o / t for o, t in zip(overlap, n_truth)]
    per_f = [_f1(p, r) for p, r in zip(per_p, per_r)]
    return MatchingScores(
        float(np.mean(per_p)), float(np.mean(per_r)), float(np.mean(per_f)), len(images), average
    )


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predictions == labels))
