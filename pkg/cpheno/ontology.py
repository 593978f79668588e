"""Phenotype knowledge graph built from an OBO-subset ontology file.

The graph keeps is-a edges in the child -> parent orientation of the
ontology file. A terminal (specific) phenotype is a term that no other
term lists as a parent; the remaining terms are phenotype groups.
"""

import hashlib
import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from cpheno.errors import InputError, StructuralError, UnknownTermError

logger = logging.getLogger(__name__)

ATTRIBUTE_KINDS = ("name", "definition", "synonym", "relation")
RELATION_TEMPLATE = "{child} is a child phenotype of {parent}"

# Synonym scopes that are ingested; BROAD/NARROW lines are skipped
SYNONYM_SCOPES = ("EXACT", "RELATED")

_QUOTED = re.compile(r'^"((?:[^"\\]|\\.)*)"\s*(.*)$')


def normalize_text(text: str) -> str:
    """Case-fold and collapse internal whitespace"""
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class PhenotypeTerm:
    term_id: str
    name: str
    definition: Optional[str] = None
    synonyms: Tuple[str, ...] = ()
    parent_ids: Tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "id": self.term_id,
            "name": self.name,
            "def": self.definition,
            "synonyms": list(self.synonyms),
            "is_a": list(self.parent_ids),
        }

    @classmethod
    def from_record(cls, record: dict) -> "PhenotypeTerm":
        try:
            return cls(
                term_id=record["id"],
                name=record["name"],
                definition=record.get("def"),
                synonyms=tuple(record.get("synonyms") or ()),
                parent_ids=tuple(record.get("is_a") or ()),
            )
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed graph record {record!r}: {e}")


@dataclass(frozen=True)
class AttributeText:
    term_id: str
    kind: str
    text: str


@dataclass
class ParseReport:
    stanzas: int = 0
    terms: int = 0
    obsolete_dropped: int = 0
    skipped_synonyms: int = 0
    ignored_keys: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "stanzas": self.stanzas,
            "terms": self.terms,
            "obsolete_dropped": self.obsolete_dropped,
            "skipped_synonyms": self.skipped_synonyms,
            "ignored_keys": dict(sorted(self.ignored_keys.items())),
        }


class PhenotypeGraph:
    """
    Immutable is-a DAG of phenotype terms

    Construction validates the structure: unique ids, non-empty names,
    no self or duplicate parents, every parent resolvable and no cycles.
    """

    def __init__(self, terms: Iterable[PhenotypeTerm], parse_report: ParseReport = None):
        self._terms: Dict[str, PhenotypeTerm] = {}
        for term in terms:
            if term.term_id in self._terms:
                raise StructuralError(f"duplicate term id: {term.term_id}")
            if not term.name or not term.name.strip():
                raise StructuralError(f"term {term.term_id} has an empty name")
            if term.term_id in term.parent_ids:
                raise StructuralError(
                    f"cycle detected: {term.term_id} -> {term.term_id}"
                )
            if len(set(term.parent_ids)) != len(term.parent_ids):
                raise StructuralError(f"duplicate parents on term {term.term_id}")
            self._terms[term.term_id] = term

        children: Dict[str, List[str]] = {term_id: [] for term_id in self._terms}
        for term in self._terms.values():
            for parent_id in term.parent_ids:
                if parent_id not in self._terms:
                    raise StructuralError(
                        f"is_a target {parent_id} of {term.term_id} does not exist"
                    )
                children[parent_id].append(term.term_id)
        self._reverse_index = {k: tuple(v) for k, v in children.items()}
        self.edge_count = sum(len(t.parent_ids) for t in self._terms.values())

        self._dag = nx.DiGraph()
        self._dag.add_nodes_from(self._terms)
        for term in self._terms.values():
            for parent_id in term.parent_ids:
                self._dag.add_edge(parent_id, term.term_id)
        try:
            cycle = nx.find_cycle(self._dag)
        except nx.NetworkXNoCycle:
            cycle = None
        if cycle:
            parent_id, child_id = cycle[0][0], cycle[0][1]
            raise StructuralError(f"cycle detected: {child_id} -> {parent_id}")

        self._name_index: Dict[str, str] = {}
        for term in self._terms.values():
            self._name_index.setdefault(normalize_text(term.name), term.term_id)

        self.parse_report = parse_report or ParseReport(terms=len(self._terms))

    @property
    def terms(self) -> Dict[str, PhenotypeTerm]:
        return dict(self._terms)

    @property
    def reverse_index(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self._reverse_index)

    @property
    def name_index(self) -> Dict[str, str]:
        return dict(self._name_index)

    def __len__(self):
        return len(self._terms)

    def __contains__(self, term_id):
        return term_id in self._terms

    def __iter__(self):
        return iter(self._terms)

    def __eq__(self, other):
        if not isinstance(other, PhenotypeGraph):
            return NotImplemented
        return self._terms == other._terms

    def term(self, term_id: str) -> PhenotypeTerm:
        try:
            return self._terms[term_id]
        except KeyError:
            raise UnknownTermError(term_id)

    def children(self, term_id: str) -> Tuple[str, ...]:
        if term_id not in self._terms:
            raise UnknownTermError(term_id)
        return self._reverse_index[term_id]

    def lookup(self, name: str) -> Optional[str]:
        return self._name_index.get(normalize_text(name))

    def topological_order(self) -> List[str]:
        """Parents before children, ties broken by term id"""
        return list(nx.lexicographical_topological_sort(self._dag))

    def max_depth(self) -> int:
        if not self._terms:
            return 0
        return nx.dag_longest_path_length(self._dag)


def _open_lines(source) -> Tuple[Iterable[str], Optional[object]]:
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise InputError(f"ontology file not found: {source}")
        handle = open(source, "r", encoding="utf-8")
        return handle, handle
    return source, None


def _unquote(value: str) -> Tuple[str, str]:
    match = _QUOTED.match(value)
    if not match:
        return value.strip(), ""
    text = match.group(1).replace('\\"', '"').replace("\\\\", "\\")
    return text, match.group(2)


def _close_stanza(stanza: dict, report: ParseReport, terms: List[PhenotypeTerm]) -> None:
    if stanza.get("is_obsolete"):
        report.obsolete_dropped += 1
        return
    if not stanza.get("id"):
        raise StructuralError("term stanza without an id line")
    parents = []
    for parent_id in stanza["is_a"]:
        if parent_id not in parents:
            parents.append(parent_id)
    synonyms = []
    for synonym in stanza["synonyms"]:
        if synonym not in synonyms:
            synonyms.append(synonym)
    terms.append(
        PhenotypeTerm(
            term_id=stanza["id"],
            name=stanza.get("name") or "",
            definition=stanza.get("def"),
            synonyms=tuple(synonyms),
            parent_ids=tuple(parents),
        )
    )


def parse_ontology(source) -> PhenotypeGraph:
    """
    Parse `[Term]` stanzas of an OBO file into a PhenotypeGraph

    Parameters:
        source: Path to an OBO file, or any iterable of text lines

    Returns:
        PhenotypeGraph: Validated graph; obsolete stanzas are dropped and
        counted in `graph.parse_report`
    """
    lines, handle = _open_lines(source)
    report = ParseReport()
    terms: List[PhenotypeTerm] = []
    stanza = None
    try:
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("!"):
                continue
            if line.startswith("[") and line.endswith("]"):
                if stanza is not None:
                    _close_stanza(stanza, report, terms)
                stanza = None
                report.stanzas += 1
                if line == "[Term]":
                    stanza = {"is_a": [], "synonyms": []}
                continue
            if stanza is None or ":" not in line:
                continue

            key, value = line.split(":", 1)
            key, value = key.strip(), value.strip()
            if key == "id":
                stanza["id"] = value
            elif key == "name":
                stanza["name"] = value
            elif key == "def":
                stanza["def"] = _unquote(value)[0]
            elif key == "synonym":
                text, rest = _unquote(value)
                scope = rest.split()[0] if rest.split() else "RELATED"
                if scope in SYNONYM_SCOPES and text:
                    stanza["synonyms"].append(text)
                else:
                    report.skipped_synonyms += 1
            elif key == "is_a":
                # is_a: HP:0000118 ! Phenotypic abnormality
                target = value.split("!", 1)[0].split()
                if not target:
                    raise InputError(f"empty is_a line in stanza {stanza.get('id', '?')}")
                stanza["is_a"].append(target[0])
            elif key == "is_obsolete":
                stanza["is_obsolete"] = value.lower() == "true"
            else:
                report.ignored_keys[key] += 1
        if stanza is not None:
            _close_stanza(stanza, report, terms)
    finally:
        if handle is not None:
            handle.close()

    report.terms = len(terms)
    graph = PhenotypeGraph(terms, parse_report=report)
    logger.info(
        f"Parsed ontology: {len(graph)} terms, {graph.edge_count} edges, "
        f"{report.obsolete_dropped} obsolete stanzas dropped"
    )
    return graph


def serialize_graph(graph: PhenotypeGraph, sink) -> None:
    """Write the graph as JSONL, one term per line in graph order"""
    if isinstance(sink, (str, os.PathLike)):
        os.makedirs(os.path.dirname(os.path.abspath(sink)), exist_ok=True)
        with open(sink, "w", encoding="utf-8") as f:
            serialize_graph(graph, f)
        return
    for term in graph.terms.values():
        sink.write(json.dumps(term.to_record(), ensure_ascii=False) + "\n")


def graph_fingerprint(graph: PhenotypeGraph) -> str:
    """sha256 of the serialized graph"""
    digest = hashlib.sha256()
    for term in graph.terms.values():
        digest.update(json.dumps(term.to_record(), sort_keys=True).encode("utf-8"))
    return digest.hexdigest()


def load_graph(source) -> PhenotypeGraph:
    lines, handle = _open_lines(source)
    try:
        records = []
        for number, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                records.append(PhenotypeTerm.from_record(json.loads(line)))
            except json.JSONDecodeError as e:
                raise InputError(f"graph line {number} is not valid JSON: {e}")
    finally:
        if handle is not None:
            handle.close()
    return PhenotypeGraph(records)


def terminal_nodes(graph: PhenotypeGraph) -> Set[str]:
    """Terms that no other term claims as parent"""
    return {term_id for term_id, kids in graph.reverse_index.items() if not kids}


def keyword_list(graph: PhenotypeGraph) -> List[Tuple[str, str]]:
    """
    Search keywords of terminal phenotypes

    Returns:
        list: (normalized keyword, term_id) pairs; names and synonyms of every
        terminal term, deduplicated per term, graph order
    """
    terminal = terminal_nodes(graph)
    keywords = []
    for term_id, term in graph.terms.items():
        if term_id not in terminal:
            continue
        seen = set()
        for text in (term.name,) + term.synonyms:
            keyword = normalize_text(text)
            if keyword and keyword not in seen:
                seen.add(keyword)
                keywords.append((keyword, term_id))
    return keywords


def attributes_of(
    graph: PhenotypeGraph, term_id: str, exclude_kinds: Sequence[str] = ()
) -> List[AttributeText]:
    """
    Textual facets of a phenotype used for Stage-1 training

    Order: name, definition, synonyms, parent relations, child relations.
    `exclude_kinds` drops whole kinds (KG-component ablations); the name is
    always kept.
    """
    term = graph.term(term_id)
    attributes = [AttributeText(term_id, "name", term.name)]
    if term.definition and "definition" not in exclude_kinds:
        attributes.append(AttributeText(term_id, "definition", term.definition))
    if "synonym" not in exclude_kinds:
        for synonym in term.synonyms:
            attributes.append(AttributeText(term_id, "synonym", synonym))
    if "relation" not in exclude_kinds:
        for parent_id in term.parent_ids:
            parent = graph.term(parent_id)
            text = RELATION_TEMPLATE.format(child=term.name, parent=parent.name)
            attributes.append(AttributeText(term_id, "relation", text))
        for child_id in graph.children(term_id):
            child = graph.term(child_id)
            text = RELATION_TEMPLATE.format(child=child.name, parent=term.name)
            attributes.append(AttributeText(term_id, "relation", text))
    return attributes


def sample_attribute_pair(
    graph: PhenotypeGraph,
    term_id: str,
    rng: np.random.Generator,
    exclude_kinds: Sequence[str] = (),
) -> Tuple[AttributeText, AttributeText]:
    """Two distinct attributes drawn uniformly; a lone attribute is paired with itself"""
    attributes = attributes_of(graph, term_id, exclude_kinds)
    if len(attributes) == 1:
        return attributes[0], attributes[0]
    first, second = rng.choice(len(attributes), size=2, replace=False)
    return attributes[int(first)], attributes[int(second)]


def eligible_terms(graph: PhenotypeGraph, terminal_only: bool = False) -> List[str]:
    """Terms Stage 1 samples from, in graph order"""
    if not terminal_only:
        return list(graph.terms)
    terminal = terminal_nodes(graph)
    return [term_id for term_id in graph.terms if term_id in terminal]


def graph_statistics(graph: PhenotypeGraph) -> dict:
    terminal = terminal_nodes(graph)
    keywords = keyword_list(graph)
    terms = graph.terms.values()
    return {
        "nodes": len(graph),
        "edges": graph.edge_count,
        "terminal_phenotypes": len(terminal),
        "phenotype_groups": len(graph) - len(terminal),
        "roots": sum(1 for t in terms if not t.parent_ids),
        "max_depth": graph.max_depth(),
        "definitions": sum(1 for t in terms if t.definition),
        "synonyms": sum(len(t.synonyms) for t in terms),
        "keyword_entries": len(keywords),
        "unique_keywords": len({k for k, _ in keywords}),
        "parse": graph.parse_report.to_dict(),
    }
