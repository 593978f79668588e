import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from cpheno.errors import ParameterError
from cpheno.evaluation.encoders import as_encoder, normalize_rows
from cpheno.evaluation.metrics import accuracy
from cpheno.evaluation.prompts import as_template_set

logger = logging.getLogger(__name__)


def class_embeddings(model, class_names: Sequence[str], templates=None) -> np.ndarray:
    """
    Prompt-ensembled class embeddings, one unit row per class

    Every template is instantiated with the class name, the unit-norm
    prompt embeddings are averaged and the mean is re-normalized.
    """
    templates = as_template_set(templates)
    if len(class_names) == 0:
        raise ParameterError("no class names")
    encoder = as_encoder(model)
    prompts = [p for name in class_names for p in templates.instantiate(name)]
    rows = np.asarray(encoder.encode_texts(prompts), dtype=np.float64)
    rows = rows.reshape(len(class_names), len(templates), -1).mean(axis=1)
    return normalize_rows(rows)


def class_embedding(model, class_name: str, templates=None) -> np.ndarray:
    return class_embeddings(model, [class_name], templates)[0]


def zero_shot_predict(image_embeddings: np.ndarray, class_matrix: np.ndarray) -> np.ndarray:
    """argmax of cosine similarity; ties go to the lowest class index"""
    scores = normalize_rows(image_embeddings) @ normalize_rows(class_matrix).T
    return np.argmax(scores, axis=1)


@dataclass
class ZeroShotResult:
    predictions: List[int]
    accuracy: Optional[float]
    class_names: List[str]
    skipped: int = 0


def zero_shot_classify(
    model,
    images: Sequence,
    class_names: Sequence[str],
    templates=None,
    labels: Optional[Sequence[int]] = None,
    root: Optional[str] = None,
) -> ZeroShotResult:
    """
    Label images by their nearest class embedding

    Parameters:
        model: VLModel or an encoder exposing encode_images / encode_texts
        images: Image references or PIL images
        class_names (list): Candidate classes, at least one
        labels (list): Class indices of the images; accuracy is None without them
        root (str): Corpus root of relative image references

    Unreadable images get prediction -1 and are left out of the accuracy.
    """
    if len(class_names) == 0:
        raise ParameterError("zero-shot classification needs at least one class")
    encoder = as_encoder(model, root)
    class_matrix = class_embeddings(encoder, class_names, templates)
    vectors, errors = encoder.encode_images(list(images))

    predictions = np.full(len(images), -1, dtype=int)
    readable = [i for i in range(len(images)) if i not in errors]
    if readable:
        predictions[readable] = zero_shot_predict(vectors[readable], class_matrix)
    if errors:
        logger.warning(f"Zero-shot: {len(errors)} unreadable images skipped")

    score = None
    if labels is not None:
        labels = np.asarray(labels)
        score = accuracy(predictions[readable], labels[readable])
    return ZeroShotResult(predictions.tolist(), score, list(class_names), len(errors))
