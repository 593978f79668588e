"""Caption refinement and subfigure-caption alignment.

Both steps talk to an external model through a client exposing
`complete(prompt, image=None) -> str`. Every failure path is conservative:
the figure keeps its original caption, and a compound figure stays whole.
"""

import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from PIL import Image

from cpheno.config import DATA_DIR
from cpheno.corpus.subfigures import SubfigureBox, draw_box_overlay
from cpheno.errors import ClientError
from cpheno.ontology import normalize_text

logger = logging.getLogger(__name__)


def _read_prompt(name: str) -> str:
    with open(os.path.join(DATA_DIR, name), "r", encoding="utf-8") as f:
        return f.read()


REFINE_PROMPT = _read_prompt("refine_prompt.txt")
ALIGN_PROMPT = _read_prompt("align_prompt.txt")

MAIN_KEY = "main"
UNKNOWN = "unknown"

_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)
_CHUNK = re.compile(r"\((main|[A-Za-z]|\d+)\)\s")
_CHUNK_PREFIX = re.compile(r"^\(([^)]+)\)\s*(.*)$", re.DOTALL)
_CAPTION_TEXT = re.compile(r'image content: "(.*?)"\n\s*\nImportant notes', re.DOTALL)


@dataclass(frozen=True)
class SubCaption:
    key: str
    text: str
    modality: Optional[str] = None


@dataclass(frozen=True)
class CompoundFallback:
    """Keep the whole figure with its whole caption"""

    reason: str


class RefinedCaptions(dict):
    """Subfigure key -> SubCaption, natural key order"""

    def __init__(self, items=(), fallback_reason: Optional[str] = None):
        super().__init__(items)
        self.fallback_reason = fallback_reason


def truncate_tokens(text: str, max_tokens: int) -> str:
    tokens = text.split()
    return " ".join(tokens[:max_tokens])


def _natural_key(key: str):
    if key == MAIN_KEY:
        return (0, [])
    return (1, [(0, int(part), "") if part.isdigit() else (1, 0, part) for part in re.split(r"(\d+)", key) if part])


def build_refine_prompt(caption: str, ref_paragraphs: Sequence[str] = ()) -> str:
    reference = "\n".join(p.strip() for p in ref_paragraphs if p.strip()) or "N/A"
    return REFINE_PROMPT.replace("{main_caption}", caption.strip()).replace(
        "{reference_para}", reference
    )


def extract_main_caption(prompt: str) -> str:
    """Main caption section of a refine prompt (between the first two `---` lines)"""
    lines = prompt.splitlines()
    marks = [i for i, line in enumerate(lines) if line.strip() == "---"]
    if len(marks) < 2:
        return ""
    return "\n".join(line.strip() for line in lines[marks[0] + 1 : marks[1]]).strip()


def format_caption_chunks(subcaptions: Dict[str, SubCaption]) -> str:
    return " ".join(f"({key}) {sub.text}" for key, sub in subcaptions.items())


def split_caption_chunks(text: str) -> List[Tuple[str, str]]:
    """Inverse of format_caption_chunks"""
    markers = list(_CHUNK.finditer(text))
    chunks = []
    for i, marker in enumerate(markers):
        end = markers[i + 1].start() if i + 1 < len(markers) else len(text)
        chunks.append((marker.group(1), text[marker.end() : end].strip()))
    return chunks


def build_align_prompt(subcaptions: Dict[str, SubCaption]) -> str:
    return ALIGN_PROMPT.replace("{caption_text}", format_caption_chunks(subcaptions))


def extract_caption_text(prompt: str) -> str:
    match = _CAPTION_TEXT.search(prompt)
    return match.group(1) if match else ""


def _strip_fence(response: str) -> str:
    response = response.strip()
    match = _FENCE.match(response)
    return match.group(1) if match else response


def parse_refined(response: str, max_tokens: int = 256) -> Optional[RefinedCaptions]:
    """Parse a refiner response, None when it is not the expected JSON shape"""
    try:
        data = json.loads(_strip_fence(response))
    except (json.JSONDecodeError, TypeError):
        return None
    if not isinstance(data, dict) or not data:
        return None

    parsed = {}
    for key, value in data.items():
        if isinstance(value, dict):
            text, modality = value.get("enhanced_caption"), value.get("modality")
        else:
            text, modality = value, None
        if not isinstance(text, str) or not text.strip():
            continue
        key = str(key).strip()
        parsed[key] = SubCaption(
            key=key,
            text=truncate_tokens(text, max_tokens),
            modality=modality if isinstance(modality, str) else None,
        )
    if not parsed:
        return None
    return RefinedCaptions((k, parsed[k]) for k in sorted(parsed, key=_natural_key))


def refine_captions(
    llm,
    caption: str,
    ref_paragraphs: Sequence[str] = (),
    boxes: Sequence[SubfigureBox] = (),
    max_tokens: int = 256,
) -> RefinedCaptions:
    """
    Ask the refiner for subfigure-level captions

    Parameters:
        llm: Client exposing complete(prompt)
        caption (str): Original figure caption
        ref_paragraphs (list): In-text paragraphs referencing the figure
        boxes (list): Detected subfigures of the figure, for logging
        max_tokens (int): Cap on each enhanced caption, in whitespace tokens

    Returns:
        RefinedCaptions: key -> SubCaption; `{"main": original caption}` with
        `fallback_reason` set when the refiner fails twice or is unreachable
    """
    prompt = build_refine_prompt(caption, ref_paragraphs)
    reason = "malformed_response"
    for attempt in range(2):
        try:
            response = llm.complete(prompt)
        except ClientError as e:
            logger.warning(f"Caption refiner unreachable, keeping original caption: {e}")
            reason = "refiner_error"
            break
        parsed = parse_refined(response, max_tokens)
        if parsed is not None:
            logger.debug(f"Refined caption into {list(parsed)} for {len(boxes)} boxes")
            return parsed
        logger.warning(f"Malformed refiner response (attempt {attempt + 1})")

    return RefinedCaptions(
        [(MAIN_KEY, SubCaption(MAIN_KEY, caption, None))], fallback_reason=reason
    )


def _resolve_chunk(chunk: str, subcaptions: Dict[str, SubCaption]) -> Optional[str]:
    chunk = chunk.strip()
    if chunk in subcaptions:
        return chunk
    prefix = _CHUNK_PREFIX.match(chunk)
    if prefix and prefix.group(1) in subcaptions:
        return prefix.group(1)

    norm = normalize_text(chunk)
    if not norm:
        return None
    exact = [k for k, sub in subcaptions.items() if normalize_text(sub.text) == norm]
    if len(exact) == 1:
        return exact[0]
    partial = [
        k
        for k, sub in subcaptions.items()
        if norm in normalize_text(sub.text) or normalize_text(sub.text) in norm
    ]
    return partial[0] if len(partial) == 1 else None


def parse_alignment(
    response: str, boxes: Sequence[SubfigureBox], subcaptions: Dict[str, SubCaption]
) -> Union[List[Tuple[str, SubCaption]], CompoundFallback]:
    try:
        items = json.loads(_strip_fence(response))
    except (json.JSONDecodeError, TypeError):
        return CompoundFallback("unparseable_alignment")
    if not isinstance(items, list):
        return CompoundFallback("unparseable_alignment")

    box_ids = [box.box_id for box in boxes]
    mapping = {}
    for item in items:
        if not isinstance(item, dict):
            return CompoundFallback("unparseable_alignment")
        box_id = str(item.get("bbox_id", "")).strip()
        chunk = item.get("caption_chunk")
        if box_id not in box_ids or box_id in mapping:
            return CompoundFallback("non_bijective_alignment")
        if not isinstance(chunk, str) or chunk.strip().lower() == UNKNOWN:
            return CompoundFallback("unknown_alignment")
        key = _resolve_chunk(chunk, subcaptions)
        if key is None:
            return CompoundFallback("unresolved_caption_chunk")
        mapping[box_id] = key

    if set(mapping) != set(box_ids) or len(set(mapping.values())) != len(subcaptions):
        return CompoundFallback("non_bijective_alignment")
    return [(box_id, subcaptions[mapping[box_id]]) for box_id in box_ids]


def align_subfigures(
    boxes: Sequence[SubfigureBox],
    subcaptions: Dict[str, SubCaption],
    aligner,
    image: Optional[Image.Image] = None,
) -> Union[List[Tuple[str, SubCaption]], CompoundFallback]:
    """
    Pair every subfigure box with one subcaption

    Returns:
        list: (box_id, SubCaption) in box order when the aligner yields a
        bijection, otherwise a CompoundFallback naming the reason
    """
    if len(boxes) != len(subcaptions):
        return CompoundFallback("count_mismatch")
    if len(boxes) == 1:
        return [(boxes[0].box_id, next(iter(subcaptions.values())))]
    if image is None:
        return CompoundFallback("no_image")

    overlay = draw_box_overlay(image, boxes)
    try:
        response = aligner.complete(build_align_prompt(subcaptions), image=overlay)
    except ClientError as e:
        logger.warning(f"Subfigure aligner unreachable, keeping compound figure: {e}")
        return CompoundFallback("aligner_error")
    return parse_alignment(response, boxes, subcaptions)
