"""Frozen VGG-style feature extractor used by the perceptual losses.

Five stages of two 3×3 conv + ReLU, with 2×2 max-pooling in front of
every stage but the first.  Level 0 is the raw image; level ``i`` is the
output of stage ``i`` (the conv{i}_2 tap of VGG19).

Pretrained weights are not shipped.  By default the weights are drawn once
from a seeded normal distribution with std gain/sqrt(fan_in) and frozen;
real weights can be loaded from a checkpoint file.  The default gain is
sqrt(2), which keeps activation scale roughly constant through the ReLU
stack so the deep taps are not vanishingly small next to level 0.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import ConvLayer, Module

VGG_WIDTHS = (64, 128, 256, 512, 512)
NUM_LEVELS = 6
DEFAULT_GAIN = float(np.sqrt(2.0))


class PerceptionNet(Module):
    def __init__(self, widths=VGG_WIDTHS, seed=0, dtype=np.float32, gain=DEFAULT_GAIN):
        super().__init__()
        if len(widths) != 5:
            raise ValueError(f"need 5 stage widths, got {len(widths)}")
        rng = np.random.default_rng(seed)
        self.widths = tuple(int(w) for w in widths)
        self.seed = seed
        layers = []
        in_ch = 3
        for w in self.widths:
            for _ in range(2):
                layer = ConvLayer(in_ch, w, 3, stride=1, padding=1, rng=rng,
                                  init_std=gain / np.sqrt(in_ch * 9), dtype=dtype)
                layers.append(layer)
                in_ch = w
        self.layers = layers
        self.freeze()
        self.eval()

    @classmethod
    def scaled(cls, multiplier, seed=0, dtype=np.float32, gain=DEFAULT_GAIN):
        return cls(tuple(max(1, int(round(w * multiplier))) for w in VGG_WIDTHS), seed, dtype, gain)

    def features(self, image, levels=range(NUM_LEVELS)):
        """Return ``{level: tensor}`` for the requested tap levels."""
        levels = sorted(set(levels))
        if any(l < 0 or l >= NUM_LEVELS for l in levels):
            raise ValueError(f"levels must lie in 0..{NUM_LEVELS - 1}, got {levels}")
        h, w = image.shape[2:]
        if h % 16 or w % 16:
            raise T.ShapeError(f"perception input {h}×{w} must be divisible by 16")
        out = {}
        if 0 in levels:
            out[0] = image
        deepest = max(levels)
        x = image
        for stage in range(1, deepest + 1):
            if stage > 1:
                x = T.max_pool2d(x, 2)
            a, b = self.layers[2 * stage - 2], self.layers[2 * stage - 1]
            x = T.relu(b(T.relu(a(x))))
            if stage in levels:
                out[stage] = x
        return out


def perception_features(image, levels, phi):
    feats = phi.features(image, levels)
    return [feats[l] for l in sorted(set(levels))]
