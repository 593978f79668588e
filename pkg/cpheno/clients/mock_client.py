import json
import re
from collections import deque
from typing import Iterable, List, Optional, Union

from PIL import Image

from cpheno.clients.base_client import BaseClient
from cpheno.corpus.captions import extract_caption_text, extract_main_caption, split_caption_chunks

_PANEL = re.compile(r"\bPanel\s+([A-Z])\s*:", re.IGNORECASE)
_CITATION = re.compile(r"\[\s*\d+(?:\s*[,–-]\s*\d+)*\s*\]")

MODALITY_KEYWORDS = (
    ("fundus", "Fundus photography"),
    ("optical coherence", "OCT"),
    ("mri", "MRI"),
    ("ct scan", "CT"),
    ("radiograph", "X-ray"),
    ("x-ray", "X-ray"),
    ("histolog", "Histology"),
    ("photograph", "Clinical photograph"),
    ("photo", "Clinical photograph"),
)


def clean_caption(text: str) -> str:
    """Drop citation brackets and collapse whitespace"""
    return " ".join(_CITATION.sub("", text).split())


def guess_modality(text: str) -> str:
    lowered = text.lower()
    for keyword, modality in MODALITY_KEYWORDS:
        if keyword in lowered:
            return modality
    return "Other"


class RuleBasedRefiner(BaseClient):
    """Deterministic caption refiner splitting on "Panel X:" markers"""

    name = "rule-refiner"

    def complete(self, prompt: str, image: Optional[Image.Image] = None) -> str:
        caption = extract_main_caption(prompt)
        markers = list(_PANEL.finditer(caption))
        if not markers:
            text = clean_caption(caption)
            return json.dumps({"main": {"enhanced_caption": text, "modality": guess_modality(text)}})

        result = {}
        for i, marker in enumerate(markers):
            end = markers[i + 1].start() if i + 1 < len(markers) else len(caption)
            text = clean_caption(caption[marker.end() : end])
            key = marker.group(1).upper()
            if key not in result and text:
                result[key] = {"enhanced_caption": text, "modality": guess_modality(text)}
        return json.dumps(result)


class IdentityAligner(BaseClient):
    """Maps box_i to the i-th caption chunk"""

    name = "identity-aligner"

    def complete(self, prompt: str, image: Optional[Image.Image] = None) -> str:
        chunks = split_caption_chunks(extract_caption_text(prompt))
        return json.dumps(
            [
                {"bbox_id": f"box_{n}", "caption_chunk": f"({key}) {text}"}
                for n, (key, text) in enumerate(chunks, 1)
            ]
        )


class ScriptedClient(BaseClient):
    """Replays queued responses; queued exceptions are raised"""

    name = "scripted"

    def __init__(self, responses: Iterable[Union[str, Exception]]):
        self.responses = deque(responses)
        self.calls: List[str] = []
        self.images: List[Optional[Image.Image]] = []

    def complete(self, prompt: str, image: Optional[Image.Image] = None) -> str:
        self.calls.append(prompt)
        self.images.append(image)
        if not self.responses:
            raise AssertionError("scripted client ran out of responses")
        response = self.responses.popleft()
        if isinstance(response, Exception):
            raise response
        return response
