"""Preprocessing tests: depth normalization, warping, inverse mapping."""

import numpy as np
import pytest

from mvdp.classifier.preprocess import (
    EmptyForeground,
    TARGET_MEAN_DEPTH,
    margin_for,
    preprocess,
    unmap_probabilities,
    warp_labels,
)
from mvdp.render import DEPTH_SENTINEL, DEPTH_STEP, dequantize_depth, quantize_depth


def frame_with_block(size, y0, y1, x0, x1, level):
    frame = np.full((size, size), DEPTH_SENTINEL, dtype=np.uint8)
    frame[y0:y1, x0:x1] = level
    return frame


def rendered_frame(seed=11, size=128, distance=(2.2, 3.8)):
    from mvdp.body import PosturePool, canonical_character
    from mvdp.render import CameraRange, default_intrinsics, sample_views

    rig = CameraRange(distance=distance)
    s = sample_views([canonical_character()], rig,
                     PosturePool.for_stage("easy"), 1, seed=seed,
                     intrinsics=default_intrinsics(size))
    return s.depth[0], s.labels[0]


class TestPreprocess:
    def test_already_normalized_frame_is_identity(self):
        # A centered square already spanning the content box at ~1.6 m keeps
        # its levels; scale is exactly 1 and the offset vanishes.
        size = 128
        content = size - 2 * margin_for(size)  # 98
        lo = (size - content) // 2
        level = quantize_depth(np.array([TARGET_MEAN_DEPTH]))[0]
        frame = frame_with_block(size, lo, lo + content, lo, lo + content, level)
        out, rec = preprocess(frame, size)
        assert rec.scale == 1.0
        np.testing.assert_allclose(rec.offset, [0.0, 0.0], atol=1e-9)
        assert abs(rec.depth_shift) <= DEPTH_STEP / 2
        np.testing.assert_array_equal(out, frame)

    def test_person_at_3m2_is_shifted_to_1m6(self):
        level = quantize_depth(np.array([3.2]))[0]
        frame = frame_with_block(64, 20, 44, 25, 39, level)
        out, rec = preprocess(frame, 64)
        assert rec.depth_shift == pytest.approx(1.6 - 3.2, abs=DEPTH_STEP)
        fg = out != DEPTH_SENTINEL
        mean = dequantize_depth(out[fg]).mean()
        assert mean == pytest.approx(TARGET_MEAN_DEPTH, abs=DEPTH_STEP / 2 + 1e-9)

    def test_rendered_frame_mean_depth_normalized(self):
        depth, _ = rendered_frame()
        out, _ = preprocess(depth, 128)
        fg = out != DEPTH_SENTINEL
        mean = dequantize_depth(out[fg]).mean()
        # requantization rounds each pixel by at most half a step
        assert mean == pytest.approx(TARGET_MEAN_DEPTH, abs=DEPTH_STEP / 2 + 1e-9)

    def test_content_fits_window_with_margin(self):
        depth, _ = rendered_frame(seed=3)
        out, rec = preprocess(depth, 64)
        ys, xs = np.nonzero(out != DEPTH_SENTINEL)
        m = margin_for(64)
        # nearest-neighbor rounding can spill at most one pixel into the margin
        assert ys.min() >= m - 1 and ys.max() <= 63 - m + 1
        assert xs.min() >= m - 1 and xs.max() <= 63 - m + 1
        span = max(ys.max() - ys.min() + 1, xs.max() - xs.min() + 1)
        assert span >= 64 - 2 * m - 1  # the larger side fills the content box

    def test_inverse_mapping_recovers_foreground_set(self):
        # An upscaled (distant) person: mapping the preprocessed foreground
        # back yields exactly the original foreground pixel set.
        depth, _ = rendered_frame(seed=7, distance=(3.0, 3.9))
        out, rec = preprocess(depth, 128)
        assert rec.scale > 1.0
        qy, qx = np.nonzero(out != DEPTH_SENTINEL)
        px, py = rec.to_source(qx, qy)
        recovered = set(zip(py.tolist(), px.tolist()))
        ys, xs = np.nonzero(depth != DEPTH_SENTINEL)
        assert recovered == set(zip(ys.tolist(), xs.tolist()))

    def test_empty_foreground_raises(self):
        frame = np.full((64, 64), DEPTH_SENTINEL, dtype=np.uint8)
        with pytest.raises(EmptyForeground):
            preprocess(frame, 64)


class TestWarpAndUnmap:
    def test_warped_labels_cosupport_with_depth(self):
        depth, labels = rendered_frame(seed=5)
        out, rec = preprocess(depth, 64)
        warped = warp_labels(rec, labels)
        np.testing.assert_array_equal(warped == 0, out == DEPTH_SENTINEL)

    def test_unmap_roundtrips_onehot_labels(self):
        # One-hot maps built from warped labels must unmap to the original
        # labels on every foreground pixel (upscale case: the pixel map is
        # injective).
        depth, labels = rendered_frame(seed=9, distance=(3.2, 3.9))
        out, rec = preprocess(depth, 128)
        assert rec.scale > 1.0
        warped = warp_labels(rec, labels)
        pmap = np.zeros((44, 128, 128), dtype=np.float32)
        ys, xs = np.ogrid[:128, :128]
        pmap[warped, ys, xs] = 1.0
        unmapped = unmap_probabilities(rec, pmap, 44)
        fg = depth != DEPTH_SENTINEL
        np.testing.assert_array_equal(unmapped.argmax(axis=2)[fg], labels[fg])
        np.testing.assert_array_equal(unmapped[~fg, 0], 1.0)

    def test_unmap_assigns_background_outside_support(self):
        depth, _ = rendered_frame(seed=13)
        out, rec = preprocess(depth, 64)
        pmap = np.full((44, 64, 64), 1.0 / 44, dtype=np.float32)
        unmapped = unmap_probabilities(rec, pmap, 44)
        bg = depth == DEPTH_SENTINEL
        assert (unmapped[bg, 0] == 1.0).all()
        assert (unmapped[bg, 1:] == 0.0).all()
