import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from cpheno.corpus.images import Bounds, load_image
from cpheno.corpus.records import FigureRecord

logger = logging.getLogger(__name__)

Detection = Tuple[Bounds, float]


@dataclass(frozen=True)
class SubfigureBox:
    box_id: str
    bounds: Bounds
    confidence: float

    @property
    def index(self) -> int:
        return int(self.box_id.split("_", 1)[1])


class SubfigureDetector:
    """Finds candidate panels of a compound figure"""

    def detect(self, image: Image.Image) -> List[Detection]:
        raise NotImplementedError


class StaticDetector(SubfigureDetector):
    """Returns a fixed list of detections whatever the image"""

    def __init__(self, detections: Sequence[Detection]):
        self.detections = list(detections)

    def detect(self, image: Image.Image) -> List[Detection]:
        return list(self.detections)


def _spans(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs of True as (start, end_exclusive)"""
    spans = []
    start = None
    for i, value in enumerate(mask):
        if value and start is None:
            start = i
        elif not value and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(mask)))
    return spans


class GutterDetector(SubfigureDetector):
    """
    Grid splitter based on background gutters

    Columns and rows that are entirely background separate the figure into
    a grid of cells; each cell's confidence is its content fraction, so an
    empty grid slot scores 0.
    """

    def __init__(self, background_level: int = 245, min_size: int = 8):
        self.background_level = background_level
        self.min_size = min_size

    def detect(self, image: Image.Image) -> List[Detection]:
        pixels = np.asarray(image.convert("RGB"))
        background = np.all(pixels >= self.background_level, axis=2)
        content = ~background
        col_spans = [s for s in _spans(content.any(axis=0)) if s[1] - s[0] >= self.min_size]
        row_spans = [s for s in _spans(content.any(axis=1)) if s[1] - s[0] >= self.min_size]

        detections = []
        for y0, y1 in row_spans:
            for x0, x1 in col_spans:
                confidence = float(content[y0:y1, x0:x1].mean())
                detections.append(((x0, y0, x1 - x0, y1 - y0), confidence))
        return detections


def reading_order(bounds: Sequence[Bounds]) -> List[Bounds]:
    """Top-to-bottom rows, left-to-right within a row"""
    rows: List[List[Bounds]] = []
    row_bottom = None
    for box in sorted(bounds, key=lambda b: (b[1], b[0])):
        center_y = box[1] + box[3] / 2
        if rows and center_y < row_bottom:
            rows[-1].append(box)
        else:
            rows.append([box])
            row_bottom = box[1] + box[3]
    return [box for row in rows for box in sorted(row, key=lambda b: (b[0], b[1]))]


def _clip(bounds: Bounds, width: int, height: int) -> Optional[Bounds]:
    x, y, w, h = (int(round(v)) for v in bounds)
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(width, x + w), min(height, y + h)
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def split_compound(
    figure: FigureRecord,
    detector: SubfigureDetector,
    threshold: float = 0.5,
    image: Optional[Image.Image] = None,
    root: Optional[str] = None,
) -> List[SubfigureBox]:
    """
    Split a figure into subfigure boxes

    Parameters:
        figure (FigureRecord): Figure to split
        detector (SubfigureDetector): Panel detector
        threshold (float): Minimum detection confidence
        image (PIL.Image): Already decoded figure image, loaded from
            figure.image_ref when None
        root (str): Corpus root for relative image paths

    Returns:
        list: box_1..box_n in reading order; empty when the figure stays unsplit
    """
    if image is None:
        image = load_image(figure.image_ref, root)
    try:
        detections = detector.detect(image)
    except Exception as e:
        logger.warning(f"Detector failed on figure {figure.figure_id}, keeping it unsplit: {e}")
        return []

    kept = []
    for bounds, confidence in detections:
        if confidence < threshold:
            continue
        clipped = _clip(bounds, image.width, image.height)
        if clipped is not None:
            kept.append((clipped, min(1.0, float(confidence))))
    if len(kept) <= 1:
        return []

    confidences = {}
    for bounds, confidence in kept:
        confidences[bounds] = max(confidence, confidences.get(bounds, 0.0))
    ordered = reading_order(list(confidences))
    return [
        SubfigureBox(box_id=f"box_{n}", bounds=bounds, confidence=confidences[bounds])
        for n, bounds in enumerate(ordered, 1)
    ]


def draw_box_overlay(image: Image.Image, boxes: Sequence[SubfigureBox]) -> Image.Image:
    """Copy of the image with red box outlines and centered box_n labels"""
    overlay = image.convert("RGB").copy()
    draw = ImageDraw.Draw(overlay)
    font = ImageFont.load_default()
    for box in boxes:
        x, y, w, h = box.bounds
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=(255, 0, 0), width=2)
        left, top, right, bottom = draw.textbbox((0, 0), box.box_id, font=font)
        tx = x + (w - (right - left)) / 2
        ty = y + (h - (bottom - top)) / 2
        draw.text((tx, ty), box.box_id, fill=(255, 0, 0), font=font)
    return overlay
