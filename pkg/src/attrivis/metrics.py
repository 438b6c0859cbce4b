"""Accuracy, correlation, and human leave-one-out baselines.

Model outputs are scored as the positive-class probability thresholded at
0.5 (ties count as positive) for accuracy, and as the Pearson correlation
between that probability and the mean human rating. Human performance uses
a leave-one-out protocol: each rater is scored against the consensus
(mean) of the remaining raters.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from attrivis.data import DatasetManifest, binarize
from attrivis.errors import (
    ConfigError,
    EmptySet,
    InsufficientRaters,
    ShapeMismatch,
    UndefinedCorrelation,
)
from attrivis.seeding import derive_seed


@dataclass
class PredictionSet:
    image_ids: Sequence[str]
    p_positive: np.ndarray
    binary_truth: np.ndarray
    continuous_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p_positive = np.asarray(self.p_positive, dtype=np.float64)
        self.binary_truth = np.asarray(self.binary_truth)
        n = len(self.image_ids)
        if self.p_positive.shape != (n,) or self.binary_truth.shape != (n,):
            raise ShapeMismatch("prediction set fields must have equal length")
        if self.continuous_truth is not None:
            self.continuous_truth = np.asarray(self.continuous_truth,
                                               dtype=np.float64)
            if self.continuous_truth.shape != (n,):
                raise ShapeMismatch("prediction set fields must have equal length")
        if n and (self.p_positive.min() < 0 or self.p_positive.max() > 1):
            raise ConfigError("probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.image_ids)


def accuracy(ps: PredictionSet) -> float:
    if len(ps) == 0:
        raise EmptySet("cannot score an empty prediction set")
    pred = (ps.p_positive >= 0.5).astype(np.int64)
    return float(np.mean(pred == ps.binary_truth))


def pearson(x, y) -> float:
    """Plain Pearson correlation coefficient of two equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatch("correlation needs two equal-length vectors")
    if x.shape[0] < 3:
        raise UndefinedCorrelation("need at least 3 points for a correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined for constant input")
    return float((xc * yc).sum() / (sx * sy))


def correlation(ps: PredictionSet) -> float:
    if ps.continuous_truth is None:
        raise ConfigError("prediction set has no continuous truth to correlate")
    return pearson(ps.p_positive, ps.continuous_truth)


@dataclass
class LooResult:
    """Per-rater leave-one-out scores and their mean."""
    per_rater: np.ndarray
    mean: float


def human_loo(manifest: DatasetManifest, attribute: str, kind: str = "accuracy",
              seed: int = 0) -> LooResult:
    """Score each rater against the consensus of the others.

    kind="accuracy": the held-out rater's ratings and the others' mean are
    both median-split with the standard tie rule, then compared; images
    dropped by either split (odd-n median drop) are excluded from the
    comparison. kind="correlation": Pearson of the raw ratings against the
    others' mean.
    """
    matrix = manifest.ratings_matrix(attribute)
    n_raters = matrix.shape[1]
    if n_raters < 2:
        raise InsufficientRaters(
            f"leave-one-out needs >= 2 raters, attribute {attribute!r} has "
            f"{n_raters}")
    if kind not in ("accuracy", "correlation"):
        raise ConfigError(f"kind must be accuracy or correlation, got {kind!r}")
    scores = np.empty(n_raters)
    for r in range(n_raters):
        own = matrix[:, r]
        others = matrix[:, [c for c in range(n_raters) if c != r]].mean(axis=1)
        if kind == "correlation":
            scores[r] = pearson(own, others)
        else:
            own_b = binarize(own, derive_seed(seed, "loo", attribute, r, "self"))
            cons_b = binarize(others, derive_seed(seed, "loo", attribute, r, "cons"))
            keep = (own_b >= 0) & (cons_b >= 0)
            if not keep.any():
                raise EmptySet("no images left after dropping split medians")
            scores[r] = np.mean(own_b[keep] == cons_b[keep])
    return LooResult(per_rater=scores, mean=float(scores.mean()))
