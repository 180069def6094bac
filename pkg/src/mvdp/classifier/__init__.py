"""Per-pixel body part classification: preprocessing, the FCN, the oracle."""

from __future__ import annotations

import numpy as np

from .fcn import FcnConfig, FcnModel
from .layers import ShapeMismatch
from .oracle import OracleClassifier
from .preprocess import EmptyForeground, preprocess, unmap_probabilities, warp_labels

__all__ = [
    "EmptyForeground",
    "FcnClassifier",
    "FcnConfig",
    "FcnModel",
    "OracleClassifier",
    "ShapeMismatch",
    "avg_per_class_accuracy",
    "classify",
    "PerClassAccuracy",
    "preprocess",
    "unmap_probabilities",
    "warp_labels",
]


class FcnClassifier:
    """Preprocess -> forward -> unmap, yielding original-coordinate maps."""

    def __init__(self, model: FcnModel):
        self.model = model

    @property
    def needs_groundtruth(self) -> bool:
        return False

    def classify_frame(self, depth: np.ndarray, gt_labels=None) -> np.ndarray:
        window, record = preprocess(depth, self.model.config.window)
        pmap = self.model.probabilities(window[None])[0]
        return unmap_probabilities(record, pmap, self.model.config.n_classes)


def classify(classifier, depth: np.ndarray, gt_labels: np.ndarray | None = None) -> np.ndarray:
    """Probability map (H, W, P+1) in original pixel coordinates.

    ``classifier`` is an OracleClassifier (which consumes the groundtruth
    labels) or an FcnClassifier (which ignores them).
    """
    return classifier.classify_frame(depth, gt_labels)


def avg_per_class_accuracy(pred_labels: np.ndarray, gt_labels: np.ndarray) -> float:
    """Mean recall over the part classes present in the groundtruth.

    Background participates in training loss but is excluded here: the
    dominant background class would otherwise inflate the score.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeMismatch(f"{pred_labels.shape} vs {gt_labels.shape}")
    recalls = []
    for cls in np.unique(gt_labels):
        if cls == 0:
            continue
        mask = gt_labels == cls
        recalls.append(float((pred_labels[mask] == cls).mean()))
    if not recalls:
        return float("nan")
    return float(np.mean(recalls))


class PerClassAccuracy:
    """Pooled per-class recall accumulator across many frames."""

    def __init__(self, n_labels: int = 43):
        self.hits = np.zeros(n_labels + 1, dtype=np.int64)
        self.counts = np.zeros(n_labels + 1, dtype=np.int64)

    def update(self, pred_labels: np.ndarray, gt_labels: np.ndarray) -> None:
        if pred_labels.shape != gt_labels.shape:
            raise ShapeMismatch(f"{pred_labels.shape} vs {gt_labels.shape}")
        correct = pred_labels == gt_labels
        self.hits += np.bincount(gt_labels.ravel(), weights=correct.ravel(),
                                 minlength=len(self.hits)).astype(np.int64)
        self.counts += np.bincount(gt_labels.ravel(), minlength=len(self.counts))

    def value(self) -> float:
        present = self.counts[1:] > 0
        if not present.any():
            return float("nan")
        recalls = self.hits[1:][present] / self.counts[1:][present]
        return float(recalls.mean())
