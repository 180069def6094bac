"""Multiview fusion into a labeled point cloud and per-class statistics.

Every confidently classified foreground pixel is backprojected, moved into
the reference frame, and tagged with its argmax part label. Per class the
feature block holds 24 reals in a frozen layout:

    offset  0: median (x, y, z)
    offset  3: covariance, row-major 3x3 (population normalization, mean-
               centered)
    offset 12: covariance eigenvalues, descending
    offset 15: standard deviation per axis
    offset 18: minimum per axis
    offset 21: maximum per axis

Blocks concatenate in class id order 1..P (P=43 gives 1032 values). Absent
classes are zero-filled; a separate presence vector says which classes
contributed, so the regressor can learn missing-class compensation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraParams, RigidTransform, backproject_many, sym_eigenvalues
from .render import DEPTH_SENTINEL, dequantize_depth

FEATURES_PER_CLASS = 24
MEDIAN = slice(0, 3)
COVARIANCE = slice(3, 12)
EIGENVALUES = slice(12, 15)
STD = slice(15, 18)
MINIMUM = slice(18, 21)
MAXIMUM = slice(21, 24)

DEFAULT_PROB_THRESHOLD = 0.3


class NoViews(ValueError):
    """fuse() needs at least one view."""


class NoForegroundPoints(ValueError):
    """No pixel survived the probability threshold; the frame carries no
    usable evidence."""


@dataclass(frozen=True)
class LabeledPointCloud:
    """Points in the reference frame with argmax labels and provenance."""

    positions: np.ndarray   # (N, 3) float64
    labels: np.ndarray      # (N,) uint8, 1..P
    probabilities: np.ndarray  # (N,) float32 winning probability
    cameras: np.ndarray     # (N,) uint8 source view index

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class ClassStats:
    median: np.ndarray
    covariance: np.ndarray   # (3, 3)
    eigenvalues: np.ndarray  # descending
    std: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    present: bool
    count: int

    def block(self) -> np.ndarray:
        out = np.zeros(FEATURES_PER_CLASS)
        out[MEDIAN] = self.median
        out[COVARIANCE] = self.covariance.ravel()
        out[EIGENVALUES] = self.eigenvalues
        out[STD] = self.std
        out[MINIMUM] = self.minimum
        out[MAXIMUM] = self.maximum
        return out


@dataclass(frozen=True)
class FeatureVector:
    """24 statistics per class, concatenated, plus presence flags."""

    values: np.ndarray    # (24 * P,)
    presence: np.ndarray  # (P,) bool


def fuse(views, reference: RigidTransform,
         prob_threshold: float = DEFAULT_PROB_THRESHOLD) -> LabeledPointCloud:
    """Merge per-view probability maps into one labeled reference-frame cloud.

    ``views`` yields (probability map (H, W, P+1) in original pixel
    coordinates, depth levels (H, W) uint8, CameraParams). A pixel
    contributes when its depth is valid, its argmax class is foreground, and
    the winning probability reaches the threshold.
    """
    views = list(views)
    if not views:
        raise NoViews("no views to fuse")
    to_reference = reference.inverse()
    positions, labels, probs, cams = [], [], [], []
    for cam_idx, (pmap, depth, cam) in enumerate(views):
        winner = pmap.argmax(axis=2)
        top = np.take_along_axis(pmap, winner[..., None], axis=2)[..., 0]
        keep = (depth != DEPTH_SENTINEL) & (winner > 0) & (top >= prob_threshold)
        ys, xs = np.nonzero(keep)
        if len(ys) == 0:
            continue
        pts = backproject_many(np.column_stack([xs, ys]),
                               dequantize_depth(depth[ys, xs]), cam)
        positions.append(to_reference.apply(pts))
        labels.append(winner[ys, xs].astype(np.uint8))
        probs.append(top[ys, xs].astype(np.float32))
        cams.append(np.full(len(ys), cam_idx, dtype=np.uint8))
    if not positions:
        raise NoForegroundPoints("no pixel passed the probability threshold")
    return LabeledPointCloud(np.concatenate(positions), np.concatenate(labels),
                             np.concatenate(probs), np.concatenate(cams))


def class_statistics(cloud: LabeledPointCloud, class_id: int) -> ClassStats:
    """The 24-entry statistics block of one class (zeros when absent).

    Points are put in canonical (lexicographic) order first so the result is
    bitwise independent of point and camera ordering.
    """
    pts = cloud.positions[cloud.labels == class_id]
    if len(pts) == 0:
        z = np.zeros(3)
        return ClassStats(z, np.zeros((3, 3)), z.copy(), z.copy(), z.copy(),
                          z.copy(), present=False, count=0)
    pts = pts[np.lexsort(pts.T)]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    return ClassStats(
        median=np.median(pts, axis=0),
        covariance=cov,
        eigenvalues=sym_eigenvalues(cov),
        std=np.sqrt(np.diag(cov)),
        minimum=pts.min(axis=0),
        maximum=pts.max(axis=0),
        present=True,
        count=len(pts),
    )


def extract_features(cloud: LabeledPointCloud, n_labels: int = 43) -> FeatureVector:
    """Concatenated per-class statistics, class ids 1..P in order."""
    values = np.zeros(FEATURES_PER_CLASS * n_labels)
    presence = np.zeros(n_labels, dtype=bool)
    for class_id in range(1, n_labels + 1):
        stats = class_statistics(cloud, class_id)
        base = (class_id - 1) * FEATURES_PER_CLASS
        values[base:base + FEATURES_PER_CLASS] = stats.block()
        presence[class_id - 1] = stats.present
    return FeatureVector(values, presence)


def dump_cloud(path, cloud: LabeledPointCloud) -> None:
    """Plain-text debug dump: one 'x y z label prob cam' line per point."""
    with open(path, "w") as fh:
        for p, lab, prob, cam in zip(cloud.positions, cloud.labels,
                                     cloud.probabilities, cloud.cameras):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {lab} {prob:.4f} {cam}\n")
