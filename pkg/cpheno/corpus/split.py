import logging
import os
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set, Union

import numpy as np

from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import InvariantViolation, ParameterError

logger = logging.getLogger(__name__)


@dataclass
class BenchmarkSplit:
    train: List[ImageCaptionPair]
    bench: List[ImageCaptionPair]
    holdout_ids: List[str]

    def report(self) -> dict:
        return {
            "train_pairs": len(self.train),
            "bench_pairs": len(self.bench),
            "train_articles": len({p.pmcid for p in self.train}),
            "bench_articles": len({p.pmcid for p in self.bench}),
            "bench_phenotypes": len({t for p in self.bench for t in p.phenotype_ids}),
            "holdout_ids": list(self.holdout_ids),
            "disjoint": True,
        }


def draw_holdout(pmcids: Iterable[str], fraction: float, seed: int = 0) -> Set[str]:
    """Seeded sample of round(fraction * #articles) article ids"""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"holdout fraction must lie in [0, 1], got {fraction}")
    ordered = sorted(set(pmcids))
    n = int(round(fraction * len(ordered)))
    if n == 0:
        return set()
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ordered), size=n, replace=False)
    return {ordered[int(i)] for i in chosen}


def benchmark_split(
    pairs: Sequence[ImageCaptionPair],
    holdout_ids: Optional[Iterable[str]] = None,
    fraction: float = 0.2,
    seed: int = 0,
) -> BenchmarkSplit:
    """
    Article-level train/benchmark split

    Parameters:
        pairs (list): Curated pairs
        holdout_ids (iterable): Article ids routed to the benchmark; drawn
            with `fraction` and `seed` when None
        fraction (float): Share of articles held out when drawing
        seed (int): Sampling seed

    Returns:
        BenchmarkSplit: train and bench pairs in input order
    """
    if holdout_ids is None:
        holdout = draw_holdout((p.pmcid for p in pairs), fraction, seed)
    else:
        holdout = set(holdout_ids)
    unknown = holdout - {p.pmcid for p in pairs}
    if unknown:
        logger.warning(f"{len(unknown)} holdout ids have no pairs: {sorted(unknown)}")

    train = [p for p in pairs if p.pmcid not in holdout]
    bench = [p for p in pairs if p.pmcid in holdout]

    train_articles = {p.pmcid for p in train}
    bench_articles = {p.pmcid for p in bench}
    train_figures = {(p.pmcid, p.figure_id) for p in train}
    bench_figures = {(p.pmcid, p.figure_id) for p in bench}
    if train_articles & bench_articles or train_figures & bench_figures:
        raise InvariantViolation("train and benchmark splits share articles or figures")

    logger.info(
        f"Split {len(pairs)} pairs: {len(train)} train / {len(bench)} bench "
        f"({len(bench_articles)} held-out articles)"
    )
    return BenchmarkSplit(train=train, bench=bench, holdout_ids=sorted(holdout))


def parse_holdout(value: str) -> Union[float, List[str]]:
    """
    Interpret a --holdout argument

    A number is a fraction, an existing file lists one id per line, anything
    else is a comma-separated id list.
    """
    value = value.strip()
    try:
        return float(value)
    except ValueError:
        pass
    if os.path.exists(value):
        with open(value, "r", encoding="utf-8") as f:
            return [line.strip() for line in f if line.strip() and not line.startswith("#")]
    return [v.strip() for v in value.split(",") if v.strip()]
