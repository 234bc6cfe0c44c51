"""Multi-task encoder-decoder producing the coarse try-on image and mask.

The network is a U-Net in the image-to-image translation style: six
stride-2 4×4 convolutions down, six stride-2 4×4 transposed convolutions
up, with each encoder output concatenated onto the mirror decoder input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, ConvLayer, Module
from .optim import Adam
from .representation import NUM_CHANNELS
from .tensor import Tensor

ENCODER_FILTERS = (64, 128, 256, 512, 512, 512)
DECODER_CHANNELS = (512, 512, 256, 128, 64, 4)
LEAKY_SLOPE = 0.2
DROPOUT_P = 0.5
DROPOUT_LAYERS = 3
INPUT_CHANNELS = 3 + NUM_CHANNELS
PERCEPTUAL_LEVELS = (0, 1, 2, 3, 4, 5)
DIVISOR = 2 ** len(ENCODER_FILTERS)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Per-level multipliers on the mean absolute feature difference."""

    lambdas: tuple = (1.0,) * 6

    def __post_init__(self):
        if len(self.lambdas) != 6 or any(l < 0 for l in self.lambdas):
            raise ValueError("need six nonnegative level weights")
        if not any(l > 0 for l in self.lambdas):
            raise ValueError("at least one level weight must be positive")


@dataclass
class CoarseOutput:
    image: Tensor  # N×3×m×n in [0, 1]
    mask: Tensor  # N×1×m×n in [0, 1]


def scale_channels(channels, width):
    return tuple(max(1, int(round(c * width))) for c in channels)


class CoarseGenerator(Module):
    def __init__(self, width=1.0, seed=0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        enc = scale_channels(ENCODER_FILTERS, width)
        dec = scale_channels(DECODER_CHANNELS[:-1], width) + (DECODER_CHANNELS[-1],)
        self.width = width
        self.encoder_channels = enc
        self.decoder_channels = dec
        self.skip = True

        def conv(i, o, transposed=False):
            return ConvLayer(i, o, 4, stride=2, padding=1, transposed=transposed, rng=rng, dtype=dtype)

        n = len(enc)
        self.enc = [conv(INPUT_CHANNELS if i == 0 else enc[i - 1], enc[i]) for i in range(n)]
        # no normalization on the outermost and innermost encoder layers
        self.enc_bn = [BatchNorm2d(enc[i], dtype=dtype) for i in range(1, n - 1)]
        self.dec = []
        for j in range(n):
            in_ch = enc[-1] if j == 0 else dec[j - 1] + enc[n - 1 - j]
            self.dec.append(conv(in_ch, dec[j], transposed=True))
        self.dec_bn = [BatchNorm2d(dec[j], dtype=dtype) for j in range(n - 1)]

    def __call__(self, c, p, rng=None):
        return coarse_forward(c, p, self, rng)


def coarse_forward(c, p, gen, rng=None):
    """Run the generator on product image ``c`` and representation ``p``.

    Dropout on the first three decoder layers only fires in training mode,
    where ``rng`` supplies the masks.
    """
    c, p = T.as_tensor(c), T.as_tensor(p)
    h, w = c.shape[2:]
    if h % DIVISOR or w % DIVISOR:
        raise T.ShapeError(f"generator input {h}×{w} must be divisible by {DIVISOR}")
    if c.shape[1] != 3 or p.shape[1] != NUM_CHANNELS:
        raise T.ShapeError(
            f"expected 3 + {NUM_CHANNELS} input channels, got {c.shape[1]} + {p.shape[1]}"
        )
    if gen.training and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    x = T.concat([c, p], axis=1)
    skips = []
    n = len(gen.enc)
    for i, layer in enumerate(gen.enc):
        if i > 0:
            x = T.leaky_relu(x, LEAKY_SLOPE)
        x = layer(x)
        if 0 < i < n - 1:
            x = gen.enc_bn[i - 1](x)
        skips.append(x)
    for j, layer in enumerate(gen.dec):
        if j > 0:
            skip = skips[n - 1 - j]
            if not gen.skip:
                skip = Tensor(np.zeros_like(skip.data))
            x = T.concat([x, skip], axis=1)
        x = layer(T.relu(x))
        if j < n - 1:
            x = gen.dec_bn[j](x)
        if j < DROPOUT_LAYERS:
            x = T.dropout(x, DROPOUT_P, gen.training, rng)
    image = (T.tanh(x[:, :3]) + 1.0) * 0.5
    mask = T.sigmoid(x[:, 3:4])
    return CoarseOutput(image, mask)


def perceptual_loss(a, b, levels, weights, phi):
    """Sum over ``levels`` of lambda_i * mean|phi_i(a) - phi_i(b)|."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise T.ShapeError(f"perceptual_loss: shape mismatch {a.shape} vs {b.shape}")
    n = a.shape[0]
    feats = phi.features(T.concat([a, b], axis=0), levels)
    total = None
    for level in sorted(set(levels)):
        lam = weights.lambdas[level]
        if lam == 0:
            continue
        f = feats[level]
        term = T.mean_all(T.abs_(f[:n] - f[n:])) * lam
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros((), dtype=a.dtype))
    return total


def mask_loss(mask, target_mask):
    target_mask = T.as_tensor(target_mask)
    if mask.shape != target_mask.shape:
        raise T.ShapeError(f"mask shape {mask.shape} vs target {target_mask.shape}")
    return T.mean_all(T.abs_(mask - target_mask))


def coarse_loss(output, target_image, target_mask, weights, phi):
    target_image = T.as_tensor(target_image)
    if output.image.shape != target_image.shape:
        raise T.ShapeError(f"image shape {output.image.shape} vs target {target_image.shape}")
    perc = perceptual_loss(output.image, target_image, PERCEPTUAL_LEVELS, weights, phi)
    return perc + mask_loss(output.mask, target_mask)


def first_nonfinite(named):
    for name, arr in named:
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


@dataclass
class CoarseTrainer:
    """Owns the generator's optimizer and dropout stream during training."""

    generator: CoarseGenerator
    phi: Module
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        self.optimizer = Adam(self.generator.parameters())
        self.rng = np.random.default_rng(self.seed)

    def step(self, c, p, image, mask):
        return train_coarse_step((c, p, image, mask), self.generator, self.optimizer,
                                 self.weights, self.phi, self.rng)


def train_coarse_step(batch, gen, optimizer, weights, phi, rng):
    """One forward/backward/Adam update; returns the pre-update loss."""
    c, p, image, mask = batch
    gen.train()
    optimizer.zero_grad()
    out = coarse_forward(c, p, gen, rng)
    loss = coarse_loss(out, image, mask, weights, phi)
    value = float(loss.data)
    if not np.isfinite(value):
        bad = first_nonfinite(
            [("coarse image", out.image.data), ("coarse mask", out.mask.data)]
            + [(n, t.data) for n, t in gen.named_parameters()]
        )
        raise NonFiniteError(f"non-finite coarse loss; first offending tensor: {bad}")
    loss.backward()
    bad = first_nonfinite([(n, t.grad) for n, t in gen.named_parameters()])
    if bad:
        raise NonFiniteError(f"non-finite gradient in {bad}")
    optimizer.step()
    return value
