"""Image handles.

An image reference is either a file path (relative paths resolve against
the corpus root) or a `synth:` handle rendering a deterministic multi-panel
figure::

    synth:<rows>x<cols>[-<skip>,<skip>...]:<seed>

Skipped cells (row-major, 0-based) are left blank. Any reference may carry a
crop suffix `#box=x,y,w,h` addressing one subfigure.
"""

import os
import re
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from cpheno.errors import InputError

PANEL_SIZE = 48
GUTTER = 8
MARGIN = 8

_SYNTH = re.compile(r"^synth:(\d+)x(\d+)(?:-([\d,]+))?:(\d+)$")
_CROP = re.compile(r"^(.*)#box=(\d+),(\d+),(\d+),(\d+)$")

Bounds = Tuple[int, int, int, int]


def crop_ref(image_ref: str, bounds: Bounds) -> str:
    x, y, w, h = bounds
    return f"{image_ref}#box={x},{y},{w},{h}"


def split_crop(image_ref: str) -> Tuple[str, Optional[Bounds]]:
    match = _CROP.match(image_ref)
    if not match:
        return image_ref, None
    return match.group(1), tuple(int(v) for v in match.groups()[1:])


def _panel(rng: np.random.Generator) -> np.ndarray:
    base = rng.integers(30, 200, size=3)
    accent = rng.integers(30, 200, size=3)
    period = int(rng.integers(4, 12))
    panel = np.empty((PANEL_SIZE, PANEL_SIZE, 3), dtype=np.uint8)
    panel[:] = base
    rows = (np.arange(PANEL_SIZE) // period) % 2 == 1
    if rng.random() < 0.5:
        panel[rows, :, :] = accent
    else:
        panel[:, rows, :] = accent
    return panel


def render_synthetic(handle: str) -> Image.Image:
    """Render a `synth:` handle; panels are separated by white gutters"""
    match = _SYNTH.match(handle)
    if not match:
        raise InputError(f"malformed synthetic image handle: {handle}")
    rows, cols = int(match.group(1)), int(match.group(2))
    skip = {int(v) for v in (match.group(3) or "").split(",") if v}
    seed = int(match.group(4))
    if rows < 1 or cols < 1:
        raise InputError(f"synthetic image needs at least one panel: {handle}")

    width = 2 * MARGIN + cols * PANEL_SIZE + (cols - 1) * GUTTER
    height = 2 * MARGIN + rows * PANEL_SIZE + (rows - 1) * GUTTER
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    for cell in range(rows * cols):
        rng = np.random.default_rng(seed * 1000 + cell)
        if cell in skip:
            continue
        r, c = divmod(cell, cols)
        y = MARGIN + r * (PANEL_SIZE + GUTTER)
        x = MARGIN + c * (PANEL_SIZE + GUTTER)
        canvas[y : y + PANEL_SIZE, x : x + PANEL_SIZE] = _panel(rng)
    return Image.fromarray(canvas, mode="RGB")


def load_image(image_ref: str, root: Optional[str] = None) -> Image.Image:
    """
    Resolve an image reference to an RGB image

    Raises:
        InputError: file missing or undecodable, malformed handle, crop outside the image
    """
    base, bounds = split_crop(image_ref)
    if base.startswith("synth:"):
        image = render_synthetic(base)
    else:
        path = base if os.path.isabs(base) or root is None else os.path.join(root, base)
        if not os.path.exists(path):
            raise InputError(f"image not found: {path}")
        try:
            with Image.open(path) as handle:
                image = handle.convert("RGB")
        except OSError as e:
            raise InputError(f"cannot decode image {path}: {e}")

    if bounds is not None:
        x, y, w, h = bounds
        if w <= 0 or h <= 0 or x + w > image.width or y + h > image.height:
            raise InputError(f"crop {bounds} outside image {image.size}: {image_ref}")
        image = image.crop((x, y, x + w, y + h))
    return image


def preprocess_image(
    image: Image.Image,
    size: int,
    mean: Sequence[float] = (0.5, 0.5, 0.5),
    std: Sequence[float] = (0.5, 0.5, 0.5),
) -> torch.Tensor:
    """Resize the shorter side to `size`, center crop, normalize; returns 3 x size x size"""
    scale = size / min(image.width, image.height)
    new_w = max(size, round(image.width * scale))
    new_h = max(size, round(image.height * scale))
    image = image.resize((new_w, new_h), Image.BILINEAR)
    left = (new_w - size) // 2
    top = (new_h - size) // 2
    image = image.crop((left, top, left + size, top + size))

    array = np.asarray(image, dtype=np.float32) / 255.0
    array = (array - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(array.transpose(2, 0, 1).copy())
