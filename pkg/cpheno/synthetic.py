"""Synthetic datasets with a known correct image/text/phenotype matching.

Used by the training sanity runs, the ablation grid and the metric tests.
"""

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import ParameterError


def planted_pairs(
    class_ids: Sequence[str],
    class_names: Sequence[str],
    n: int = 64,
    seed: int = 0,
) -> List[ImageCaptionPair]:
    """
    n single-panel synthetic images with unique captions

    Pair i shows class i % len(class_ids); its caption names the class and
    carries a unique case number, its image is a distinct `synth:` panel.
    """
    if len(class_ids) != len(class_names) or not class_ids:
        raise ParameterError("class_ids and class_names must be non-empty and aligned")
    pairs = []
    for i in range(n):
        c = i % len(class_ids)
        pmcid = f"SYN{i:04d}"
        pairs.append(
            ImageCaptionPair(
                pair_id=f"{pmcid}/fig1",
                pmcid=pmcid,
                figure_id="fig1",
                image_ref=f"synth:1x1:{seed * 10000 + i}",
                caption=f"{class_names[c]} case {i}",
                phenotype_ids=(class_ids[c],),
            )
        )
    return pairs


def _text_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "little")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class ClusteredTeacher:
    """
    Teacher whose caption embedding depends only on the class named in it

    Captions naming no class get a fixed pseudo-random direction of their own.
    Usable wherever a Stage-1 encoder is expected (`encode`, `dim`).
    """

    def __init__(self, class_names: Sequence[str], dim: int = 32, seed: int = 0):
        if len(class_names) > dim:
            raise ParameterError(f"{len(class_names)} classes do not fit in dim {dim}")
        rng = np.random.default_rng(seed)
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self.dim = dim
        # longest names first so "spider fingers" wins over "fingers"
        self.centroids: Dict[str, np.ndarray] = {
            name: basis[:, c].astype(np.float32) for c, name in enumerate(class_names)
        }
        self._names = sorted(self.centroids, key=len, reverse=True)

    def class_of(self, text: str) -> Optional[str]:
        lowered = text.lower()
        for name in self._names:
            if name.lower() in lowered:
                return name
        return None

    def encode(self, captions: Sequence[str]) -> np.ndarray:
        rows = []
        for caption in captions:
            name = self.class_of(caption)
            if name is not None:
                rows.append(self.centroids[name])
            else:
                rng = np.random.default_rng(_text_seed(caption))
                rows.append(_unit(rng.standard_normal(self.dim)).astype(np.float32))
        return np.asarray(rows, dtype=np.float32).reshape(len(rows), self.dim)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.centroids):
            digest.update(name.encode("utf-8"))
            digest.update(self.centroids[name].tobytes())
        return digest.hexdigest()


class PlantedEncoder:
    """
    Table-driven encoder with a planted alignment

    Images map to fixed vectors. Texts resolve to an exact caption vector
    when known, otherwise to the class vector of the longest class name they
    contain, so every prompt instantiated for a class embeds onto that class.
    """

    def __init__(
        self,
        image_vectors: Mapping[str, np.ndarray],
        class_vectors: Mapping[str, np.ndarray],
        text_vectors: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.image_vectors = dict(image_vectors)
        self.class_vectors = dict(class_vectors)
        self.text_vectors = dict(text_vectors or {})
        self._names = sorted(self.class_vectors, key=len, reverse=True)
        self.dim = len(next(iter(self.class_vectors.values())))

    def encode_images(self, images: Sequence[str]) -> Tuple[np.ndarray, Dict[int, str]]:
        vectors = np.full((len(images), self.dim), np.nan)
        errors = {}
        for i, ref in enumerate(images):
            if ref in self.image_vectors:
                vectors[i] = self.image_vectors[ref]
            else:
                errors[i] = f"unknown image {ref}"
        return vectors, errors

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if text in self.text_vectors:
                rows.append(self.text_vectors[text])
                continue
            name = next((n for n in self._names if n in text), None)
            if name is None:
                raise ParameterError(f"planted encoder cannot embed {text!r}")
            rows.append(self.class_vectors[name])
        return np.asarray(rows, dtype=np.float64).reshape(len(rows), self.dim)


@dataclass
class PlantedFixture:
    pairs: List[ImageCaptionPair]
    encoder: PlantedEncoder
    class_ids: List[str]
    class_names: List[str]


def planted_alignment(
    class_ids: Sequence[str],
    class_names: Sequence[str],
    per_class: int = 4,
    dim: int = 16,
    noise: float = 0.1,
    seed: int = 0,
) -> PlantedFixture:
    """
    Pairs plus an encoder whose correct matchings are known

    Classes sit on orthogonal directions; each image is its class direction
    plus small noise, and its caption embeds onto exactly the image vector.
    """
    if len(class_ids) > dim:
        raise ParameterError(f"{len(class_ids)} classes do not fit in dim {dim}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    class_vectors = {name: basis[:, c] for c, name in enumerate(class_names)}
    pairs = planted_pairs(class_ids, class_names, per_class * len(class_ids), seed)
    image_vectors, text_vectors = {}, {}
    for i, pair in enumerate(pairs):
        c = i % len(class_ids)
        vector = _unit(basis[:, c] + noise * rng.standard_normal(dim))
        image_vectors[pair.image_ref] = vector
        text_vectors[pair.caption] = vector
    encoder = PlantedEncoder(image_vectors, class_vectors, text_vectors)
    return PlantedFixture(pairs, encoder, list(class_ids), list(class_names))


def clustered_features(
    n_per_class: int,
    centers: np.ndarray,
    scale: float = 1.0,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs around `centers` (k x d); returns (features, labels)"""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64)
    features = np.concatenate(
        [c + scale * rng.standard_normal((n_per_class, centers.shape[1])) for c in centers]
    )
    labels = np.repeat(np.arange(len(centers)), n_per_class)
    return features, labels
