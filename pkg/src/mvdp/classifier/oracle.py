"""Groundtruth-replay classifier, optionally noised.

Replaying rendered labels as one-hot probability maps isolates the pose
estimation error from dense classification error; the noise rate lets
experiments interpolate between the two regimes (rate 1 relabels every
foreground pixel uniformly over the part labels).
"""

from __future__ import annotations

import numpy as np


class OracleClassifier:
    """Turns (depth, groundtruth labels) into a one-hot probability map."""

    def __init__(self, n_labels: int = 43, noise_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        self.n_labels = n_labels
        self.noise_rate = noise_rate
        self._rng = np.random.default_rng(seed)

    @property
    def needs_groundtruth(self) -> bool:
        return True

    def classify_frame(self, depth: np.ndarray, gt_labels: np.ndarray) -> np.ndarray:
        """Probability map (H, W, P+1) in original pixel coordinates."""
        if gt_labels is None:
            raise ValueError("oracle classifier needs groundtruth labels")
        labels = np.asarray(gt_labels).copy()
        if self.noise_rate > 0.0:
            fg = labels > 0
            n_fg = int(fg.sum())
            if n_fg:
                flip = self._rng.random(n_fg) < self.noise_rate
                noise = self._rng.integers(1, self.n_labels + 1, size=n_fg)
                fg_vals = labels[fg]
                fg_vals[flip] = noise[flip]
                labels[fg] = fg_vals
        h, w = labels.shape
        pmap = np.zeros((h, w, self.n_labels + 1), dtype=np.float32)
        ys, xs = np.ogrid[:h, :w]
        pmap[ys, xs, labels] = 1.0
        return pmap
