"""Refinement network: learns the blend mask between warped clothing and coarse image."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .coarse import LEAKY_SLOPE, LossWeights, NonFiniteError, first_nonfinite, perceptual_loss
from .nn import ConvLayer, Module
from .optim import Adam
from .tensor import Tensor

REFINE_FILTERS = 64
REFINE_LEVELS = (3, 4, 5)
LAMBDA_WARP = 0.1
LAMBDA_TV = 5e-6


@dataclass(frozen=True)
class RefinementLossConfig:
    lambda_warp: float = LAMBDA_WARP
    lambda_tv: float = LAMBDA_TV
    levels: tuple = REFINE_LEVELS
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lambda_warp < 0 or self.lambda_tv < 0:
            raise ValueError("loss weights must be nonnegative")


class RefinementNet(Module):
    """Three 3×3 conv + leaky ReLU layers, then a 1×1 conv and a sigmoid."""

    def __init__(self, filters=REFINE_FILTERS, seed=0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        # He-style init for a leaky-ReLU stack without normalization
        gain = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
        self.convs = []
        for i in range(3):
            in_ch = 6 if i == 0 else filters
            self.convs.append(ConvLayer(in_ch, filters, 3, stride=1, padding=1, rng=rng,
                                        init_std=gain / np.sqrt(in_ch * 9), dtype=dtype))
        self.head = ConvLayer(filters, 1, 1, rng=rng, init_std=1.0 / np.sqrt(filters), dtype=dtype)

    def __call__(self, warped, coarse):
        return refine_forward(warped, coarse, self)


def refine_forward(warped, coarse, net):
    """Composition mask alpha in (0, 1) from c' and I' (both N×3×m×n)."""
    warped, coarse = T.as_tensor(warped), T.as_tensor(coarse)
    if warped.shape != coarse.shape:
        raise T.ShapeError(f"warped {warped.shape} and coarse {coarse.shape} differ")
    x = T.concat([warped, coarse], axis=1)
    for conv in net.convs:
        x = T.leaky_relu(conv(x), LEAKY_SLOPE)
    return T.sigmoid(net.head(x))


def composite(alpha, warped, coarse):
    """alpha * c' + (1 - alpha) * I', with alpha repeated over the channels."""
    warped, coarse = T.as_tensor(warped), T.as_tensor(coarse)
    if warped.shape != coarse.shape:
        raise T.ShapeError(f"warped {warped.shape} and coarse {coarse.shape} differ")
    a = T.expand_channels(T.as_tensor(alpha), warped.shape[1])
    return a * warped + (1.0 - a) * coarse


def tv_norm(alpha):
    """Sum of absolute forward differences along rows and columns.

    For a batch this is the per-sample sum averaged over the batch.
    """
    alpha = T.as_tensor(alpha)
    dy = alpha[..., 1:, :] - alpha[..., :-1, :]
    dx = alpha[..., :, 1:] - alpha[..., :, :-1]
    n = alpha.shape[0] if alpha.ndim == 4 else 1
    return (T.sum_all(T.abs_(dy)) + T.sum_all(T.abs_(dx))) * (1.0 / n)


def refinement_loss(final, target, alpha, config, phi):
    """Perceptual term on the deep levels, minus the alpha reward, plus TV."""
    final, target, alpha = T.as_tensor(final), T.as_tensor(target), T.as_tensor(alpha)
    if final.shape != target.shape:
        raise T.ShapeError(f"output {final.shape} and target {target.shape} differ")
    loss = perceptual_loss(final, target, config.levels, config.weights, phi)
    if config.lambda_warp:
        loss = loss - T.mean_all(alpha) * config.lambda_warp
    if config.lambda_tv:
        loss = loss + tv_norm(alpha) * config.lambda_tv
    return loss


@dataclass
class RefineTrainer:
    net: RefinementNet
    phi: Module
    config: RefinementLossConfig = field(default_factory=RefinementLossConfig)

    def __post_init__(self):
        self.optimizer = Adam(self.net.parameters())

    def step(self, warped, coarse, target):
        return train_refine_step((warped, coarse, target), self.net, self.optimizer,
                                 self.config, self.phi)


def train_refine_step(batch, net, optimizer, config, phi):
    """One update of the refinement weights only; returns the pre-update loss.

    ``warped`` and ``coarse`` are plain arrays, so nothing upstream (the
    frozen coarse generator in particular) can receive gradients.
    """
    warped, coarse, target = (Tensor(np.asarray(getattr(b, "data", b))) for b in batch)
    net.train()
    optimizer.zero_grad()
    alpha = refine_forward(warped, coarse, net)
    final = composite(alpha, warped, coarse)
    loss = refinement_loss(final, target, alpha, config, phi)
    value = float(loss.data)
    if not np.isfinite(value):
        bad = first_nonfinite([("alpha", alpha.data), ("composite", final.data)]
                              + [(n, t.data) for n, t in net.named_parameters()])
        raise NonFiniteError(f"non-finite refinement loss; first offending tensor: {bad}")
    loss.backward()
    bad = first_nonfinite([(n, t.grad) for n, t in net.named_parameters()])
    if bad:
        raise NonFiniteError(f"non-finite gradient in {bad}")
    optimizer.step()
    return value
