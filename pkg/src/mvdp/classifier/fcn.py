"""Fully-convolutional dense classifier built from the numpy layers.

Topology (window S, B = len(channels) conv blocks):

    input [1, S, S]
      B x (conv3x3 + relu, conv3x3 + relu, maxpool2)   -> stride 2^B
      1x1 conv head -> coarse (P+1)-channel map         @ stride 2^B
      learned 2x upsampling                             -> stride 2^(B-1)
      + 1x1-projected tap of the stride-2^(B-1) block   (sum fusion)
      learned 2^(B-1)x upsampling, odd final kernel     -> stride 1
      per-pixel softmax over P+1 channels

Defaults: S=128, channels (16, 32, 64, 96), final kernel 9 (the 250-pixel
configuration scales it to 19). Sizes are config fields, so wider/deeper
variants stay expressible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    Conv2d,
    MaxPool2,
    ReLU,
    ShapeMismatch,
    TransposedConv2d,
    softmax_channels,
)


def default_final_kernel(window: int, final_stride: int) -> int:
    """Odd kernel covering the final stride; ~19/250 of the window when larger."""
    scaled = 2 * int(round((19 * window / 250 - 1) / 2)) + 1  # nearest odd
    k = max(final_stride + 1, scaled)
    return k if k % 2 == 1 else k + 1


@dataclass(frozen=True)
class FcnConfig:
    window: int = 128
    n_labels: int = 43
    channels: tuple[int, ...] = (16, 32, 64, 96)
    mid_kernel: int = 4
    final_kernel: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("need at least two conv blocks for the fusion tap")
        if self.window % self.coarse_stride != 0:
            raise ValueError(f"window {self.window} must be divisible by "
                             f"{self.coarse_stride}")
        k = self.resolved_final_kernel
        if k % 2 != 1:
            raise ValueError("final kernel must be odd")

    @property
    def coarse_stride(self) -> int:
        return 2 ** len(self.channels)

    @property
    def fusion_stride(self) -> int:
        return self.coarse_stride // 2

    @property
    def resolved_final_kernel(self) -> int:
        if self.final_kernel is not None:
            return self.final_kernel
        return default_final_kernel(self.window, self.fusion_stride)

    @property
    def n_classes(self) -> int:
        return self.n_labels + 1


class FcnModel:
    """The dense classifier network; owns its weights and their gradients."""

    def __init__(self, config: FcnConfig, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        c_prev = 1
        self.blocks = []
        for c in config.channels:
            self.blocks.append((Conv2d(c_prev, c, 3, rng, self.dtype), ReLU(),
                                Conv2d(c, c, 3, rng, self.dtype), ReLU(),
                                MaxPool2()))
            c_prev = c
        nc = config.n_classes
        self.head = Conv2d(config.channels[-1], nc, 1, rng, self.dtype)
        self.up_mid = TransposedConv2d(nc, nc, config.mid_kernel, 2, rng, self.dtype)
        self.tap = Conv2d(config.channels[-2], nc, 1, rng, self.dtype)
        self.up_final = TransposedConv2d(nc, nc, config.resolved_final_kernel,
                                         config.fusion_stride, rng, self.dtype)

    def _layers(self):
        for i, block in enumerate(self.blocks):
            for j, layer in enumerate(block):
                yield f"block{i}.{type(layer).__name__.lower()}{j}", layer
        yield "head", self.head
        yield "up_mid", self.up_mid
        yield "tap", self.tap
        yield "up_final", self.up_final

    def parameters(self):
        """Yields (name, value, grad) for every trainable array."""
        for prefix, layer in self._layers():
            for name, value, grad in layer.params():
                yield f"{prefix}.{name}", value, grad

    def zero_grads(self):
        for _, _, grad in self.parameters():
            grad[:] = 0

    def embed(self, levels: np.ndarray) -> np.ndarray:
        """Quantized uint8 frames [N, S, S] -> network input [N, 1, S, S]."""
        x = levels.astype(self.dtype) / 127.5 - 1.0
        return x[:, None]

    def forward(self, x: np.ndarray, train: bool = False,
                return_coarse: bool = False):
        s = self.config.window
        if x.shape[2:] != (s, s):
            raise ShapeMismatch(f"model window is {s}, input is {x.shape[2:]}")
        tap_input = None
        for i, (conv_a, relu_a, conv_b, relu_b, pool) in enumerate(self.blocks):
            x = relu_a.forward(conv_a.forward(x, train), train)
            x = relu_b.forward(conv_b.forward(x, train), train)
            x = pool.forward(x, train)
            if i == len(self.blocks) - 2:
                tap_input = x
        coarse = self.head.forward(x, train)
        fused = self.up_mid.forward(coarse, train) + self.tap.forward(tap_input, train)
        logits = self.up_final.forward(fused, train)
        if return_coarse:
            return logits, coarse
        return logits

    def backward(self, dlogits: np.ndarray) -> None:
        dfused = self.up_final.backward(dlogits)
        dtap_input = self.tap.backward(dfused)
        dcoarse = self.up_mid.backward(dfused)
        dx = self.head.backward(dcoarse)
        for i in range(len(self.blocks) - 1, -1, -1):
            conv_a, relu_a, conv_b, relu_b, pool = self.blocks[i]
            if i == len(self.blocks) - 2:
                dx = dx + dtap_input  # the tap reads this block's output
            dx = pool.backward(dx)
            dx = conv_b.backward(relu_b.backward(dx))
            dx = conv_a.backward(relu_a.backward(dx))

    def probabilities(self, levels: np.ndarray) -> np.ndarray:
        """Softmax class maps [N, P+1, S, S] for uint8 frames [N, S, S]."""
        return softmax_channels(self.forward(self.embed(levels)))
