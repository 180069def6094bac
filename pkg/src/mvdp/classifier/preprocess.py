"""Depth frame normalization for the dense classifier.

Shifts the person's mean depth to 1.60 m (in meters, then requantized),
scales the foreground bounding box (aspect preserved) into an SxS window
minus a margin of round(30 * S / 250) pixels, and records the affine pixel
mapping so per-pixel classifications can be carried back to original frame
coordinates. The warp is a backward nearest-neighbor map; its record is the
single source of truth for warping labels alongside and for the inverse
mapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..render import DEPTH_SENTINEL, dequantize_depth, quantize_depth

TARGET_MEAN_DEPTH = 1.60


class EmptyForeground(ValueError):
    """The frame has no non-sentinel pixel to normalize."""


@dataclass(frozen=True)
class PreprocessRecord:
    """Affine pixel map original -> window: q = scale * p + offset (x, y)."""

    scale: float
    offset: np.ndarray            # (2,) x, y
    src_shape: tuple[int, int]    # (H, W) of the original frame
    window: int
    depth_shift: float            # meters added to foreground depths
    fg_mask: np.ndarray           # original-frame foreground

    def to_window(self, px: np.ndarray, py: np.ndarray):
        """Original pixel coords -> nearest window pixel (clipped)."""
        qx = np.rint(self.scale * px + self.offset[0]).astype(np.int64)
        qy = np.rint(self.scale * py + self.offset[1]).astype(np.int64)
        return (np.clip(qx, 0, self.window - 1), np.clip(qy, 0, self.window - 1))

    def to_source(self, qx: np.ndarray, qy: np.ndarray):
        """Window pixel coords -> nearest original pixel (unclipped)."""
        px = np.rint((qx - self.offset[0]) / self.scale).astype(np.int64)
        py = np.rint((qy - self.offset[1]) / self.scale).astype(np.int64)
        return px, py


def margin_for(window: int) -> int:
    return int(round(30 * window / 250))


def _backward_map(record: PreprocessRecord):
    """Per window pixel: source pixel indices and their validity mask."""
    s = record.window
    qx, qy = np.meshgrid(np.arange(s), np.arange(s))
    px, py = record.to_source(qx, qy)
    h, w = record.src_shape
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    px_c = np.clip(px, 0, w - 1)
    py_c = np.clip(py, 0, h - 1)
    valid = inside & record.fg_mask[py_c, px_c]
    return py_c, px_c, valid


def preprocess(depth: np.ndarray, window: int = 128) -> tuple[np.ndarray, PreprocessRecord]:
    """Normalize one depth frame into the classifier window.

    Returns (window levels uint8, record). Raises EmptyForeground when the
    frame is all sentinel.
    """
    depth = np.asarray(depth)
    fg = depth != DEPTH_SENTINEL
    if not fg.any():
        raise EmptyForeground("no foreground pixels")

    meters = dequantize_depth(depth)
    shift = TARGET_MEAN_DEPTH - float(meters[fg].mean())
    shifted = np.where(fg, quantize_depth(meters + shift),
                       np.uint8(DEPTH_SENTINEL)).astype(np.uint8)

    ys, xs = np.nonzero(fg)
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    content = window - 2 * margin_for(window)
    if content <= 0:
        raise ValueError(f"window {window} too small for its margin")
    scale = content / max(x1 - x0 + 1, y1 - y0 + 1)
    center = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
    offset = (window - 1) / 2.0 - scale * center

    record = PreprocessRecord(scale, offset, depth.shape, window, shift, fg)
    py, px, valid = _backward_map(record)
    out = np.where(valid, shifted[py, px], np.uint8(DEPTH_SENTINEL)).astype(np.uint8)
    return out, record


def warp_labels(record: PreprocessRecord, labels: np.ndarray) -> np.ndarray:
    """Carry a groundtruth label frame through the same warp (0 fills)."""
    py, px, valid = _backward_map(record)
    return np.where(valid, labels[py, px], np.uint8(0)).astype(np.uint8)


def unmap_probabilities(record: PreprocessRecord, pmap: np.ndarray,
                        n_classes: int) -> np.ndarray:
    """Window class probabilities [C, S, S] -> original frame [H, W, C].

    Original pixels outside the preprocessed support get background
    probability 1.
    """
    h, w = record.src_shape
    out = np.zeros((h, w, n_classes), dtype=pmap.dtype)
    out[:, :, 0] = 1.0
    ys, xs = np.nonzero(record.fg_mask)
    qx, qy = record.to_window(xs, ys)
    out[ys, xs] = pmap[:, qy, qx].T
    return out
