import logging
import os
from typing import Dict, Iterable, List, Optional

from cpheno.corpus.records import ArticleRecord, ImageCaptionPair, load_pairs, read_jsonl
from cpheno.errors import InputError

logger = logging.getLogger(__name__)


class DataFetcher:
    def __init__(self, corpus_path: str, corpus_root: Optional[str] = None):
        """
        Initialize corpus loader

        Parameters:
            corpus_path (str): Article corpus JSONL, one ArticleRecord per line
            corpus_root (str): Directory relative image paths resolve against,
                defaults to the directory of the corpus file
        """
        self.corpus_path = corpus_path
        self.corpus_root = corpus_root or os.path.dirname(os.path.abspath(corpus_path))
        self._articles: Optional[Dict[str, ArticleRecord]] = None

    def load_local_data(self) -> Dict[str, ArticleRecord]:
        """
        Load the article corpus from the local file

        Returns:
            dict: Mapping from PMCID to ArticleRecord, file order
        """
        if self._articles is not None:
            return self._articles

        logger.info(f"Loading article corpus from {self.corpus_path}")
        articles = {}
        for record in read_jsonl(self.corpus_path):
            article = ArticleRecord.from_record(record)
            if article.pmcid in articles:
                raise InputError(f"duplicate pmcid in corpus: {article.pmcid}")
            articles[article.pmcid] = article
        n_figures = sum(len(a.figures) for a in articles.values())
        logger.info(f"Loaded {len(articles)} articles with {n_figures} figures")
        self._articles = articles
        return articles

    def fetch_articles(self, pmcids: Optional[Iterable[str]] = None) -> List[ArticleRecord]:
        """
        Fetch articles, optionally restricted to a PMCID subset

        Parameters:
            pmcids (iterable): PMCIDs to keep, all articles when None

        Returns:
            list: ArticleRecords in corpus order
        """
        articles = self.load_local_data()
        if pmcids is None:
            return list(articles.values())
        wanted = set(pmcids)
        missing = wanted - set(articles)
        if missing:
            logger.warning(f"{len(missing)} requested articles not in corpus: {sorted(missing)}")
        return [a for pmcid, a in articles.items() if pmcid in wanted]


def fetch_pairs(path: str, pmcids: Optional[Iterable[str]] = None) -> List[ImageCaptionPair]:
    pairs = load_pairs(path)
    if pmcids is None:
        return pairs
    wanted = set(pmcids)
    return [p for p in pairs if p.pmcid in wanted]
