"""End-to-end curation of image-caption pairs from an article corpus.

Per matched figure: cluster filter, subfigure split, caption refinement,
subfigure-caption alignment, second filter pass over the subfigure crops,
and finally integration with the phenotype graph.
"""

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from PIL import Image
from tqdm import tqdm

from cpheno.clients import make_clients
from cpheno.config import CurationConfig
from cpheno.corpus.captions import CompoundFallback, align_subfigures, refine_captions
from cpheno.corpus.cluster_filter import (
    ClusterFilterModel,
    ImageEmbedder,
    PixelStatsEmbedder,
    apply_cluster_filter,
    cluster_summary,
    fit_cluster_filter,
    read_keeplist,
)
from cpheno.corpus.images import crop_ref, load_image
from cpheno.corpus.matcher import KeywordMatcher
from cpheno.corpus.records import ArticleRecord, AuditLog, FigureRecord, ImageCaptionPair, save_pairs, sort_pairs, write_jsonl
from cpheno.corpus.subfigures import GutterDetector, SubfigureDetector, split_compound
from cpheno.errors import InputError
from cpheno.ontology import PhenotypeGraph, keyword_list, terminal_nodes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlignedItem:
    """One image-text unit before integration with the graph"""

    pmcid: str
    figure_id: str
    image_ref: str
    caption: str
    term_ids: Tuple[str, ...]
    subfigure_index: Optional[int] = None
    modality: Optional[str] = None


@dataclass
class CurationResult:
    pairs: List[ImageCaptionPair]
    audit: AuditLog
    stats: Dict
    clusters: Optional[pd.DataFrame] = None


def pair_id_of(pmcid: str, figure_id: str, subfigure_index: Optional[int]) -> str:
    base = f"{pmcid}/{figure_id}"
    return base if subfigure_index is None else f"{base}/box_{subfigure_index}"


def integrate(
    items: Sequence[AlignedItem],
    graph: PhenotypeGraph,
    keywords=None,
    strict: bool = False,
    audit: Optional[AuditLog] = None,
) -> List[ImageCaptionPair]:
    """
    Link aligned items to terminal phenotypes

    Whole-figure items keep the figure's matched terms. A subfigure keeps the
    figure terms whose keywords survive in its own caption; when none do it
    inherits all of them, or is dropped in strict mode.

    Returns:
        list: ImageCaptionPairs sorted by (pmcid, figure_id, subfigure_index)
    """
    audit = audit if audit is not None else AuditLog()
    if isinstance(keywords, KeywordMatcher):
        matcher = keywords
    else:
        matcher = KeywordMatcher(keywords if keywords is not None else keyword_list(graph))
    terminal = terminal_nodes(graph)

    pairs = []
    for item in items:
        parent_ids = [t for t in item.term_ids if t in terminal]
        term_ids = parent_ids
        if item.subfigure_index is not None and parent_ids:
            found = set(matcher.find_terms(item.caption))
            surviving = [t for t in parent_ids if t in found]
            if surviving:
                term_ids = surviving
            elif strict:
                audit.add("dropped", item.pmcid, item.figure_id, "no_keyword_in_subcaption",
                          subfigure_index=item.subfigure_index)
                continue
        if not term_ids:
            audit.add("dropped", item.pmcid, item.figure_id, "empty_term_set",
                      subfigure_index=item.subfigure_index)
            continue
        pairs.append(
            ImageCaptionPair(
                pair_id=pair_id_of(item.pmcid, item.figure_id, item.subfigure_index),
                pmcid=item.pmcid,
                figure_id=item.figure_id,
                image_ref=item.image_ref,
                caption=item.caption,
                phenotype_ids=tuple(term_ids),
                subfigure_index=item.subfigure_index,
                modality_tag=item.modality,
            )
        )

    dropped = audit.count("dropped")
    if dropped:
        logger.info(f"Integration dropped {dropped} items")
    return sort_pairs(pairs)


class Curator:
    def __init__(
        self,
        graph: PhenotypeGraph,
        curation: CurationConfig,
        root: Optional[str] = None,
        refiner=None,
        aligner=None,
        detector: Optional[SubfigureDetector] = None,
        embedder: Optional[ImageEmbedder] = None,
        seed: int = 0,
    ):
        """
        Initialize the curation pipeline

        Parameters:
            graph (PhenotypeGraph): Governing phenotype graph
            curation (CurationConfig): Curation options
            root (str): Base directory of relative image paths
            refiner, aligner: Model clients, built from the config when None
            detector (SubfigureDetector): Panel detector, GutterDetector by default
            embedder (ImageEmbedder): Cluster-filter embedder
            seed (int): Seed of the cluster filter
        """
        self.graph = graph
        self.curation = curation
        self.root = root
        if curation.enabled and (refiner is None or aligner is None):
            default_refiner, default_aligner = make_clients(curation)
            refiner = refiner or default_refiner
            aligner = aligner or default_aligner
        self.refiner = refiner
        self.aligner = aligner
        self.detector = detector or GutterDetector()
        self.embedder = embedder or PixelStatsEmbedder(dim=curation.embed_dim, seed=seed)
        self.seed = seed
        self.matcher = KeywordMatcher(keyword_list(graph))
        self.filter_model: Optional[ClusterFilterModel] = None

    def _load(self, ref: str, audit: AuditLog, pmcid: str, figure_id: str) -> Optional[Image.Image]:
        try:
            return load_image(ref, self.root)
        except InputError as e:
            audit.add("skipped", pmcid, figure_id, "missing_image", detail=str(e))
            logger.warning(f"Skipping {pmcid}/{figure_id}: {e}")
            return None

    def fit_filter(self, articles: Sequence[ArticleRecord]) -> Optional[pd.DataFrame]:
        """Fit the cluster filter on every corpus figure and load the keep-list"""
        # missing images are audited once, when their figure is processed
        audit = AuditLog()
        if not self.curation.keeplist_path:
            logger.info("No keep-list configured, cluster filter disabled")
            return None
        refs, images = [], []
        for article in articles:
            for figure in article.figures:
                image = self._load(figure.image_ref, audit, article.pmcid, figure.figure_id)
                if image is not None:
                    refs.append(figure.image_ref)
                    images.append(image)
        embeddings = self.embedder.embed(images)
        model = fit_cluster_filter(embeddings, self.curation.k1, self.curation.k2, self.seed)
        keep = read_keeplist(self.curation.keeplist_path, model)
        self.filter_model = model.with_keep_set(keep)
        return cluster_summary(self.filter_model, embeddings, refs)

    def _kept(self, images: Sequence[Image.Image]) -> List[int]:
        if self.filter_model is None:
            return list(range(len(images)))
        return apply_cluster_filter(self.filter_model, self.embedder.embed(list(images)))

    def _raw_items(self, article: ArticleRecord) -> List[AlignedItem]:
        items = []
        for figure in article.figures:
            term_ids = self.matcher.find_terms(figure.caption)
            if term_ids:
                items.append(
                    AlignedItem(article.pmcid, figure.figure_id, figure.image_ref,
                                figure.caption, tuple(term_ids))
                )
        return items

    def _figure_items(
        self, pmcid: str, figure: FigureRecord, term_ids: List[str], image: Image.Image, audit: AuditLog
    ) -> List[AlignedItem]:
        compound = AlignedItem(pmcid, figure.figure_id, figure.image_ref, figure.caption, tuple(term_ids))
        boxes = []
        if self.curation.split_subfigures:
            boxes = split_compound(figure, self.detector, self.curation.detector_threshold, image=image)

        refined = refine_captions(
            self.refiner, figure.caption, figure.ref_paragraphs, boxes, self.curation.caption_max_tokens
        )
        if refined.fallback_reason:
            audit.add("refine_fallback", pmcid, figure.figure_id, refined.fallback_reason)

        if not boxes:
            if len(refined) == 1:
                sub = next(iter(refined.values()))
                return [
                    AlignedItem(pmcid, figure.figure_id, figure.image_ref, sub.text,
                                tuple(term_ids), modality=sub.modality)
                ]
            audit.add("compound_fallback", pmcid, figure.figure_id, "count_mismatch",
                      boxes=0, subcaptions=len(refined))
            return [compound]

        aligned = align_subfigures(boxes, refined, self.aligner, image)
        if isinstance(aligned, CompoundFallback):
            audit.add("compound_fallback", pmcid, figure.figure_id, aligned.reason,
                      boxes=len(boxes), subcaptions=len(refined))
            return [compound]

        by_id = {box.box_id: box for box in boxes}
        items = [
            AlignedItem(
                pmcid,
                figure.figure_id,
                crop_ref(figure.image_ref, by_id[box_id].bounds),
                sub.text,
                tuple(term_ids),
                subfigure_index=by_id[box_id].index,
                modality=sub.modality,
            )
            for box_id, sub in aligned
        ]
        if self.filter_model is not None and self.curation.refilter_subfigures:
            crops = [image.crop(_corners(by_id[box_id].bounds)) for box_id, _ in aligned]
            kept = set(self._kept(crops))
            for index, item in enumerate(items):
                if index not in kept:
                    audit.add("filtered", pmcid, figure.figure_id, "subfigure_cluster",
                              subfigure_index=item.subfigure_index)
            items = [item for index, item in enumerate(items) if index in kept]
        return items

    def process_article(self, article: ArticleRecord) -> Tuple[List[AlignedItem], AuditLog, Counter]:
        """Aligned items of one article; safe to run concurrently"""
        audit = AuditLog()
        counts = Counter(figures=len(article.figures))
        if not self.curation.enabled:
            items = self._raw_items(article)
            counts["matched"] = len(items)
            return items, audit, counts

        matches = []
        for figure in article.figures:
            term_ids = self.matcher.find_terms(figure.caption)
            if term_ids:
                matches.append((figure, term_ids))
        counts["matched"] = len(matches)

        loaded = []
        for figure, term_ids in matches:
            image = self._load(figure.image_ref, audit, article.pmcid, figure.figure_id)
            if image is not None:
                loaded.append((figure, term_ids, image))
        kept = set(self._kept([image for _, _, image in loaded]))
        items = []
        for index, (figure, term_ids, image) in enumerate(loaded):
            if index not in kept:
                audit.add("filtered", article.pmcid, figure.figure_id, "figure_cluster")
                continue
            figure_items = self._figure_items(article.pmcid, figure, term_ids, image, audit)
            counts["subfigures"] += sum(1 for item in figure_items if item.subfigure_index is not None)
            items.extend(figure_items)
        return items, audit, counts

    def curate(self, articles: Sequence[ArticleRecord]) -> CurationResult:
        """
        Curate image-caption pairs from an article corpus

        Returns:
            CurationResult: sorted pairs, audit log, statistics and the
            cluster assignment table when a keep-list is configured
        """
        audit = AuditLog()
        clusters = None
        if self.curation.enabled:
            clusters = self.fit_filter(articles)

        workers = max(1, self.curation.workers)
        progress = dict(desc="curate", unit="article", disable=None)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(tqdm(pool.map(self.process_article, articles), total=len(articles), **progress))
        else:
            results = [self.process_article(article) for article in tqdm(articles, **progress)]

        items, counts = [], Counter()
        for article_items, article_audit, article_counts in results:
            items.extend(article_items)
            audit.extend(article_audit)
            counts.update(article_counts)

        pairs = integrate(items, self.graph, self.matcher, self.curation.strict_keywords, audit)
        stats = {
            "articles": len(articles),
            "figures": counts["figures"],
            "matched_figures": counts["matched"],
            "subfigure_pairs": counts["subfigures"],
            "filtered": audit.count("filtered"),
            "compound_fallbacks": audit.count("compound_fallback"),
            "refine_fallbacks": audit.count("refine_fallback"),
            "skipped": audit.count("skipped"),
            "dropped": audit.count("dropped"),
            "pairs": len(pairs),
            "phenotypes": len({t for p in pairs for t in p.phenotype_ids}),
            "modalities": dict(sorted(Counter(p.modality_tag or "none" for p in pairs).items())),
        }
        logger.info(
            f"Curated {stats['pairs']} pairs from {stats['matched_figures']} matched figures "
            f"({stats['compound_fallbacks']} compound fallbacks, {stats['dropped']} dropped)"
        )
        return CurationResult(pairs=pairs, audit=audit, stats=stats, clusters=clusters)


def _corners(bounds):
    x, y, w, h = bounds
    return (x, y, x + w, y + h)


def write_curation(result: CurationResult, out_path: str) -> Dict[str, str]:
    """Write pairs, audit log, statistics and cluster table next to each other"""
    out_dir = os.path.dirname(os.path.abspath(out_path))
    paths = {
        "pairs": out_path,
        "audit": os.path.join(out_dir, "audit.jsonl"),
        "stats": os.path.join(out_dir, "curation_stats.json"),
    }
    save_pairs(out_path, result.pairs)
    write_jsonl(paths["audit"], result.audit.events)
    with open(paths["stats"], "w", encoding="utf-8") as f:
        json.dump(result.stats, f, indent=2, sort_keys=True)
    if result.clusters is not None:
        paths["clusters"] = os.path.join(out_dir, "clusters.csv")
        result.clusters.to_csv(paths["clusters"], index=False)
    return paths
