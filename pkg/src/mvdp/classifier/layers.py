"""From-scratch neural network layers on numpy (im2col + GEMM convolutions).

Tensors are [N, C, H, W]. Every layer caches what its backward pass needs
when ``train=True`` and accumulates parameter gradients into ``.dw`` / ``.db``.
The transposed convolutions place stride-spaced kernel footprints by slice
addition, the exact adjoint of the gather their backward performs, so the
whole stack is finite-difference clean.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    """Input shape disagrees with what a layer or model expects."""


def _uniform_init(rng, shape, fan_in, dtype):
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d:
    """Stride-1, same-padding convolution with an odd square kernel."""

    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("Conv2d kernel must be odd")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.w = _uniform_init(rng, (c_out, c_in * kernel * kernel),
                               c_in * kernel * kernel, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._x_shape = None

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]

    def _im2col(self, x):
        k = self.kernel
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        n, c, h, w = x.shape
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)

    def forward(self, x, train=False):
        if x.shape[1] != self.c_in:
            raise ShapeMismatch(f"Conv2d expects {self.c_in} channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        cols = self._im2col(x)
        y = cols @ self.w.T + self.b
        if train:
            self._cols = cols
            self._x_shape = x.shape
        return y.reshape(n, h, w, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        n, _, h, w = self._x_shape
        k = self.kernel
        p = k // 2
        dyr = dy.transpose(0, 2, 3, 1).reshape(n * h * w, self.c_out)
        self.dw += dyr.T @ self._cols
        self.db += dyr.sum(axis=0)
        dcols = (dyr @ self.w).reshape(n, h, w, self.c_in, k, k)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # [N, C, k, k, H, W]
        dxp = np.zeros((n, self.c_in, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, ki, kj]
        self._cols = None
        return dxp[:, :, p:p + h, p:p + w]


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        dx = dy * self._mask
        self._mask = None
        return dx


class MaxPool2:
    """2x2 max pooling. Gradient follows the max mask; exact ties only occur
    among ReLU-clamped zeros whose gradient dies upstream anyway."""

    def __init__(self):
        self._mask = None
        self._shape = None

    def params(self):
        return []

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch("MaxPool2 needs even spatial dims")
        xr = x.reshape(n, c, h // 2, 2, w // 2, 2)
        y = xr.max(axis=(3, 5))
        if train:
            self._mask = xr == y[:, :, :, None, :, None]
            self._shape = x.shape
        return y

    def backward(self, dy):
        n, c, h, w = self._shape
        dx = (self._mask * dy[:, :, :, None, :, None]).reshape(n, c, h, w)
        self._mask = None
        return dx


class TransposedConv2d:
    """Learned upsampling: stride-s transposed convolution, center-cropped to
    ``s * H_in``. Requires kernel >= stride so the output has no gaps."""

    def __init__(self, c_in, c_out, kernel, stride, rng, dtype=np.float32):
        if kernel < stride:
            raise ValueError("TransposedConv2d kernel must cover the stride")
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride
        self.w = _uniform_init(rng, (c_in, c_out * kernel * kernel),
                               c_in * kernel * kernel, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._xr = None
        self._x_shape = None

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]

    def _geometry(self, h_in, w_in):
        s, k = self.stride, self.kernel
        h_full = s * (h_in - 1) + k
        w_full = s * (w_in - 1) + k
        h_out, w_out = s * h_in, s * w_in
        return h_full, w_full, h_out, w_out, (h_full - h_out) // 2, (w_full - w_out) // 2

    def forward(self, x, train=False):
        if x.shape[1] != self.c_in:
            raise ShapeMismatch(f"TransposedConv2d expects {self.c_in} channels")
        n, _, h_in, w_in = x.shape
        s, k = self.stride, self.kernel
        h_full, w_full, h_out, w_out, oy, ox = self._geometry(h_in, w_in)
        xr = x.transpose(0, 2, 3, 1).reshape(n * h_in * w_in, self.c_in)
        cols = (xr @ self.w).reshape(n, h_in, w_in, self.c_out, k, k)
        cols = cols.transpose(0, 3, 4, 5, 1, 2)  # [N, Co, k, k, Hi, Wi]
        y_full = np.zeros((n, self.c_out, h_full, w_full), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                y_full[:, :, ki:ki + s * (h_in - 1) + 1:s,
                       kj:kj + s * (w_in - 1) + 1:s] += cols[:, :, ki, kj]
        if train:
            self._xr = xr
            self._x_shape = x.shape
        y = y_full[:, :, oy:oy + h_out, ox:ox + w_out]
        return y + self.b[:, None, None]

    def backward(self, dy):
        n, _, h_in, w_in = self._x_shape
        s, k = self.stride, self.kernel
        h_full, w_full, h_out, w_out, oy, ox = self._geometry(h_in, w_in)
        self.db += dy.sum(axis=(0, 2, 3))
        dy_full = np.zeros((n, self.c_out, h_full, w_full), dtype=dy.dtype)
        dy_full[:, :, oy:oy + h_out, ox:ox + w_out] = dy
        dcols = np.empty((n, self.c_out, k, k, h_in, w_in), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dcols[:, :, ki, kj] = dy_full[:, :, ki:ki + s * (h_in - 1) + 1:s,
                                              kj:kj + s * (w_in - 1) + 1:s]
        dcolsr = dcols.transpose(0, 4, 5, 1, 2, 3).reshape(
            n * h_in * w_in, self.c_out * k * k)
        self.dw += self._xr.T @ dcolsr
        dx = (dcolsr @ self.w.T).reshape(n, h_in, w_in, self.c_in)
        self._xr = None
        return dx.transpose(0, 3, 1, 2)


def softmax_channels(logits):
    """Per-pixel softmax over the channel axis of [N, C, H, W] (or [..., C])."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean per-pixel cross entropy and its logits gradient.

    ``labels`` is [N, H, W] integer class ids covering all pixels, background
    included (no class balancing).
    """
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    probs = softmax_channels(logits)
    n, _, h, w = logits.shape
    ni, hi, wi = np.ogrid[:n, :h, :w]
    picked = probs[ni, labels, hi, wi]
    loss = float(-np.log(np.maximum(picked, 1e-30)).mean())
    dlogits = probs.copy()
    dlogits[ni, labels, hi, wi] -= 1.0
    dlogits /= n * h * w
    return loss, dlogits
