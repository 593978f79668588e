import re
from typing import Dict, Iterable, List, Sequence, Tuple

from cpheno.corpus.records import ArticleRecord, FigureRecord
from cpheno.ontology import normalize_text


class KeywordMatcher:
    """
    Whole-word exact matching of normalized keywords

    A keyword matches when it appears in the normalized text with no word
    character directly before or after it ("arm" does not match "harm").
    """

    def __init__(self, keywords: Sequence[Tuple[str, str]]):
        self.keywords = list(keywords)
        self._patterns: Dict[str, re.Pattern] = {}
        self._terms: Dict[str, List[str]] = {}
        for keyword, term_id in self.keywords:
            if keyword not in self._patterns:
                self._patterns[keyword] = re.compile(
                    r"(?<!\w)" + re.escape(keyword) + r"(?!\w)"
                )
                self._terms[keyword] = []
            if term_id not in self._terms[keyword]:
                self._terms[keyword].append(term_id)

    def find_terms(self, text: str) -> List[str]:
        """Term ids whose keywords occur in `text`, keyword-list order"""
        normalized = normalize_text(text)
        found = []
        for keyword, pattern in self._patterns.items():
            # substring test first, the regex only confirms boundaries
            if keyword in normalized and pattern.search(normalized):
                for term_id in self._terms[keyword]:
                    if term_id not in found:
                        found.append(term_id)
        return found


def match_figures(
    article: ArticleRecord, keywords
) -> List[Tuple[FigureRecord, List[str]]]:
    """
    Figures of an article whose caption mentions at least one phenotype keyword

    Parameters:
        article (ArticleRecord): Article to scan
        keywords: keyword_list output or a prepared KeywordMatcher

    Returns:
        list: (figure, matched term ids) in figure order
    """
    matcher = keywords if isinstance(keywords, KeywordMatcher) else KeywordMatcher(keywords)
    matches = []
    for figure in article.figures:
        term_ids = matcher.find_terms(figure.caption)
        if term_ids:
            matches.append((figure, term_ids))
    return matches


def match_corpus(
    articles: Iterable[ArticleRecord], keywords
) -> Dict[str, List[Tuple[FigureRecord, List[str]]]]:
    matcher = keywords if isinstance(keywords, KeywordMatcher) else KeywordMatcher(keywords)
    return {article.pmcid: match_figures(article, matcher) for article in articles}
