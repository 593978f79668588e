import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import ParameterError
from cpheno.evaluation.encoders import as_encoder

logger = logging.getLogger(__name__)


@dataclass
class LabeledFeatureSet:
    features: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ParameterError(
                f"features {self.features.shape} do not match {len(self.labels)} labels"
            )
        if not self.class_names and len(self.labels):
            self.class_names = [str(c) for c in range(int(self.labels.max()) + 1)]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ParameterError(f"labels outside [0, {self.n_classes})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> "LabeledFeatureSet":
        indices = np.asarray(indices, dtype=int)
        return LabeledFeatureSet(self.features[indices], self.labels[indices], self.class_names)


def stratified_subsample(labels: Sequence[int], ratio: float, seed: int = 0) -> np.ndarray:
    """
    Sorted indices of a per-class sample of `ratio` of the examples

    Every class present in `labels` keeps at least one example.
    """
    if not 0 < ratio <= 1:
        raise ParameterError(f"ratio must lie in (0, 1], got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    chosen = []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        n = max(1, int(round(ratio * len(members))))
        chosen.extend(rng.choice(members, size=n, replace=False).tolist())
    return np.sort(np.asarray(chosen, dtype=int))


@dataclass
class ProbeResult:
    ratio: float
    accuracy: float
    n_train: int
    missing_classes: List[int]


def linear_probe(
    train: LabeledFeatureSet,
    test: LabeledFeatureSet,
    ratio: float = 1.0,
    seed: int = 0,
    weight_decay: float = 1e-4,
    max_iter: int = 1000,
    tol: float = 1e-6,
) -> ProbeResult:
    """
    Multinomial logistic regression on frozen features

    The L2 penalty weight_decay * ||W||^2 on the mean cross-entropy maps to
    sklearn's C = 1 / (2 * weight_decay * n), its objective carrying 0.5 * ||W||^2.
    Classes missing from the subsample stay in the label space and are never predicted.
    """
    if train.n_classes != test.n_classes:
        raise ParameterError("train and test sets use different class spaces")
    if len(test) == 0:
        raise ParameterError("empty test set")
    sample = train.subset(stratified_subsample(train.labels, ratio, seed))
    present = np.unique(sample.labels)
    missing = sorted(set(range(train.n_classes)) - set(present.tolist()))
    if missing:
        logger.warning(f"Probe at ratio {ratio}: classes {missing} absent from the training subsample")

    if len(present) == 1:
        predictions = np.full(len(test), present[0])
    else:
        clf = LogisticRegression(
            C=1.0 / (2.0 * weight_decay * len(sample)),
            max_iter=max_iter,
            tol=tol,
            random_state=seed,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=ConvergenceWarning)
            clf.fit(sample.features, sample.labels)
        predictions = clf.predict(test.features)
    accuracy = float(np.mean(predictions == test.labels))
    return ProbeResult(ratio, accuracy, len(sample), missing)


def probe_sets_from_pairs(
    model,
    train_pairs: Sequence[ImageCaptionPair],
    test_pairs: Sequence[ImageCaptionPair],
    root: Optional[str] = None,
) -> Tuple[LabeledFeatureSet, LabeledFeatureSet]:
    """
    Image features labeled by each pair's first phenotype id

    The class space is the set of training labels; test pairs of other
    classes and unreadable images are dropped.
    """
    encoder = as_encoder(model, root)
    class_names = sorted({p.phenotype_ids[0] for p in train_pairs})
    index = {name: c for c, name in enumerate(class_names)}

    def features(pairs):
        pairs = [p for p in pairs if p.phenotype_ids[0] in index]
        vectors, errors = encoder.encode_images([p.image_ref for p in pairs])
        keep = [i for i in range(len(pairs)) if i not in errors]
        labels = [index[pairs[i].phenotype_ids[0]] for i in keep]
        return LabeledFeatureSet(vectors[keep], labels, class_names)

    return features(train_pairs), features(test_pairs)
