"""Two-level k-means image filter.

Figures are embedded, clustered into k1 groups, and every group is clustered
again into k2 subgroups. A keep-list of (level1, level2) leaf ids, written
after inspecting sample images of each leaf, decides which leaves survive.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from cpheno.errors import InputError, ParameterError

logger = logging.getLogger(__name__)

LeafId = Tuple[int, int]

# Standard k-means settings of the filter
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-4


class ImageEmbedder:
    """Maps images to fixed-length feature vectors"""

    dim: int

    def embed(self, images: Sequence[Image.Image]) -> np.ndarray:
        raise NotImplementedError


class PixelStatsEmbedder(ImageEmbedder):
    """
    Fixed random projection of simple pixel statistics

    Features are per-channel mean and standard deviation, per-channel
    8-bin histograms and an 8x8 grayscale thumbnail.
    """

    N_BINS = 8
    THUMB = 8

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        n_features = 6 + 3 * self.N_BINS + self.THUMB * self.THUMB
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(size=(n_features, dim)) / np.sqrt(dim)

    def _features(self, image: Image.Image) -> np.ndarray:
        pixels = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
        flat = pixels.reshape(-1, 3)
        hist = [
            np.histogram(flat[:, c], bins=self.N_BINS, range=(0.0, 1.0))[0] / len(flat)
            for c in range(3)
        ]
        thumb = image.convert("L").resize((self.THUMB, self.THUMB), Image.BILINEAR)
        return np.concatenate(
            [
                flat.mean(axis=0),
                flat.std(axis=0),
                np.concatenate(hist),
                np.asarray(thumb, dtype=np.float64).ravel() / 255.0,
            ]
        )

    def embed(self, images: Sequence[Image.Image]) -> np.ndarray:
        if not images:
            return np.zeros((0, self.dim))
        features = np.stack([self._features(image) for image in images])
        return features @ self.projection


@dataclass
class ClusterFilterModel:
    level1_centroids: np.ndarray
    level2_centroids: Dict[int, np.ndarray]
    keep_set: Set[LeafId] = field(default_factory=set)

    @property
    def leaf_ids(self) -> List[LeafId]:
        return [
            (l1, l2)
            for l1 in range(len(self.level1_centroids))
            for l2 in range(len(self.level2_centroids[l1]))
        ]

    def with_keep_set(self, keep_set: Iterable[LeafId]) -> "ClusterFilterModel":
        keep = set(keep_set)
        unknown = keep - set(self.leaf_ids)
        if unknown:
            logger.warning(f"Ignoring {len(unknown)} keep-list ids with no leaf cluster")
        return replace(self, keep_set=keep - unknown)

    def assign(self, embeddings: np.ndarray) -> List[LeafId]:
        """Nearest (level1, level2) leaf of each row, ties to the lowest index"""
        embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        if len(embeddings) == 0:
            return []
        level1 = np.argmin(cdist(embeddings, self.level1_centroids), axis=1)
        leaves = []
        for row, l1 in zip(embeddings, level1):
            d2 = cdist(row[None, :], self.level2_centroids[int(l1)])[0]
            leaves.append((int(l1), int(np.argmin(d2))))
        return leaves


def _kmeans(data: np.ndarray, k: int, random_state: int) -> np.ndarray:
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=KMEANS_MAX_ITER,
        tol=KMEANS_TOL,
        random_state=random_state,
    )
    model.fit(data)
    return model.cluster_centers_


def fit_cluster_filter(
    embeddings: np.ndarray,
    k1: int = 20,
    k2: int = 20,
    rng: Union[int, np.random.Generator, None] = 0,
) -> ClusterFilterModel:
    """
    Fit the two-level k-means model

    Parameters:
        embeddings (np.ndarray): N x d image embeddings
        k1 (int): Number of level-1 clusters
        k2 (int): Number of level-2 clusters per level-1 cluster; a level-1
            cluster with fewer than k2 members gets one subcluster per member
        rng: Seed or numpy Generator

    Returns:
        ClusterFilterModel: Fitted model with an empty keep set
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ParameterError("embeddings must be an N x d matrix")
    if k1 < 1 or k2 < 1:
        raise ParameterError("k1 and k2 must be positive")
    if len(embeddings) < k1:
        raise ParameterError(f"need at least k1={k1} embeddings, got {len(embeddings)}")
    if not np.all(np.isfinite(embeddings)):
        raise ParameterError("embeddings contain non-finite values")
    if len(embeddings) < k1 * k2:
        logger.warning(
            f"{len(embeddings)} embeddings for {k1 * k2} leaf clusters, "
            "small level-1 clusters get fewer subclusters"
        )

    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    level1 = _kmeans(embeddings, k1, int(generator.integers(2**31 - 1)))
    labels = np.argmin(cdist(embeddings, level1), axis=1)

    level2 = {}
    for l1 in range(k1):
        members = embeddings[labels == l1]
        seed = int(generator.integers(2**31 - 1))
        if len(members) == 0:
            level2[l1] = level1[l1 : l1 + 1].copy()
            continue
        level2[l1] = _kmeans(members, min(k2, len(members)), seed)

    logger.info(f"Fitted cluster filter: {k1} x {k2} on {len(embeddings)} images")
    return ClusterFilterModel(level1_centroids=level1, level2_centroids=level2)


def apply_cluster_filter(model: ClusterFilterModel, embeddings: np.ndarray) -> List[int]:
    """Indices, ascending, of embeddings whose leaf cluster is in the keep set"""
    if not model.keep_set:
        logger.warning("Cluster filter keep set is empty, every image is filtered out")
        return []
    return [
        index
        for index, leaf in enumerate(model.assign(embeddings))
        if leaf in model.keep_set
    ]


def read_keeplist(path: str, model: Optional[ClusterFilterModel] = None) -> Set[LeafId]:
    """
    Read a keep-list file

    One `l1:l2` leaf id per line, `#` starts a comment. `*` in either
    position is a wildcard and requires `model` to expand it.
    """
    if not os.path.exists(path):
        raise InputError(f"keep-list not found: {path}")
    keep: Set[LeafId] = set()
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                left, right = (part.strip() for part in line.split(":"))
                l1 = None if left == "*" else int(left)
                l2 = None if right == "*" else int(right)
            except ValueError:
                raise InputError(f"{path}:{number} is not an l1:l2 leaf id: {raw.strip()}")
            if l1 is not None and l2 is not None:
                keep.add((l1, l2))
                continue
            if model is None:
                raise InputError(f"{path}:{number} uses a wildcard without a fitted model")
            keep.update(
                leaf
                for leaf in model.leaf_ids
                if (l1 is None or leaf[0] == l1) and (l2 is None or leaf[1] == l2)
            )
    return keep


def cluster_summary(model: ClusterFilterModel, embeddings: np.ndarray, refs: Sequence[str]) -> pd.DataFrame:
    """Leaf assignment table used to author the keep-list"""
    leaves = model.assign(embeddings)
    return pd.DataFrame(
        {
            "image_ref": list(refs),
            "level1": [leaf[0] for leaf in leaves],
            "level2": [leaf[1] for leaf in leaves],
            "kept": [leaf in model.keep_set for leaf in leaves],
        }
    )
