import json
import os
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

from cpheno.errors import InputError


@dataclass(frozen=True)
class FigureRecord:
    figure_id: str
    image_ref: str
    caption: str
    ref_paragraphs: Tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "figure_id": self.figure_id,
            "image_ref": self.image_ref,
            "caption": self.caption,
            "ref_paragraphs": list(self.ref_paragraphs),
        }


@dataclass(frozen=True)
class ArticleRecord:
    pmcid: str
    figures: Tuple[FigureRecord, ...] = ()

    def __post_init__(self):
        ids = [f.figure_id for f in self.figures]
        if len(set(ids)) != len(ids):
            raise InputError(f"duplicate figure ids in article {self.pmcid}")

    def to_record(self) -> dict:
        return {"pmcid": self.pmcid, "figures": [f.to_record() for f in self.figures]}

    @classmethod
    def from_record(cls, record: dict) -> "ArticleRecord":
        try:
            figures = tuple(
                FigureRecord(
                    figure_id=str(f["figure_id"]),
                    image_ref=f["image_ref"],
                    caption=f.get("caption") or "",
                    ref_paragraphs=tuple(f.get("ref_paragraphs") or ()),
                )
                for f in record.get("figures") or ()
            )
            return cls(pmcid=str(record["pmcid"]), figures=figures)
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed article record: {e}")


@dataclass(frozen=True)
class ImageCaptionPair:
    pair_id: str
    pmcid: str
    figure_id: str
    image_ref: str
    caption: str
    phenotype_ids: Tuple[str, ...]
    subfigure_index: Optional[int] = None
    modality_tag: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.pmcid, self.figure_id, self.subfigure_index or 0)

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "pmcid": self.pmcid,
            "figure_id": self.figure_id,
            "subfigure_index": self.subfigure_index,
            "image_ref": self.image_ref,
            "caption": self.caption,
            "phenotype_ids": list(self.phenotype_ids),
            "modality_tag": self.modality_tag,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ImageCaptionPair":
        try:
            phenotype_ids = tuple(record["phenotype_ids"])
            if not phenotype_ids:
                raise InputError(f"pair {record.get('pair_id')} has no phenotype ids")
            return cls(
                pair_id=record["pair_id"],
                pmcid=str(record["pmcid"]),
                figure_id=str(record["figure_id"]),
                image_ref=record["image_ref"],
                caption=record["caption"],
                phenotype_ids=phenotype_ids,
                subfigure_index=record.get("subfigure_index"),
                modality_tag=record.get("modality_tag"),
            )
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed pair record: {e}")


@dataclass
class AuditLog:
    """Fallback and drop events of a curation run"""

    events: List[dict] = field(default_factory=list)

    def add(self, event: str, pmcid: str, figure_id: str, reason: str, **extra):
        entry = {"event": event, "pmcid": pmcid, "figure_id": figure_id, "reason": reason}
        entry.update(extra)
        self.events.append(entry)

    def extend(self, other: "AuditLog"):
        self.events.extend(other.events)

    def count(self, event: str) -> int:
        return sum(1 for e in self.events if e["event"] == event)


def read_jsonl(path: str) -> List[dict]:
    if not os.path.exists(path):
        raise InputError(f"file not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{number} is not valid JSON: {e}")
    return rows


def write_jsonl(path: str, rows: Iterable[dict]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def sort_pairs(pairs: Iterable[ImageCaptionPair]) -> List[ImageCaptionPair]:
    return sorted(pairs, key=lambda p: p.key)


def save_pairs(path: str, pairs: Iterable[ImageCaptionPair]) -> None:
    write_jsonl(path, (p.to_record() for p in pairs))


def load_pairs(path: str) -> List[ImageCaptionPair]:
    return [ImageCaptionPair.from_record(r) for r in read_jsonl(path)]
