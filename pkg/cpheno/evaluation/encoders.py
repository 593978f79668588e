from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from cpheno.models.vl_model import VLModel, encode_image, encode_text


class ModelEncoder:
    """
    Evaluation view of a VLModel

    Evaluation code only needs `encode_images(refs) -> (rows, errors)` and
    `encode_texts(texts) -> rows`; any object exposing both can be scored.
    """

    def __init__(self, model: VLModel, root: Optional[str] = None, batch_size: int = 64):
        self.model = model
        self.root = root
        self.batch_size = batch_size

    def encode_images(self, images: Sequence) -> Tuple[np.ndarray, Dict[int, str]]:
        return encode_image(self.model, list(images), self.root, self.batch_size)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        return encode_text(self.model, list(texts))


def as_encoder(model, root: Optional[str] = None):
    if hasattr(model, "encode_images") and hasattr(model, "encode_texts"):
        return model
    return ModelEncoder(model, root)


def normalize_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)
