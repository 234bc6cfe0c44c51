"""Finite-difference gradient checks for every differentiable operation.

Each case builds float64 inputs from a seed and returns a
:class:`~viton.gradcheck.GradCheckResult`.  Inputs to the elementary
piecewise-linear operations are kept away from their kinks; the cases that
run through the perception network rely on the kink detection in
:mod:`viton.gradcheck` and difference a random subset of elements.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .coarse import CoarseOutput, LossWeights, coarse_loss, perceptual_loss
from .gradcheck import GradCheckResult, check_gradients, random_tensor
from .perception import PerceptionNet
from .refine import RefinementLossConfig, RefinementNet, composite, refine_forward, refinement_loss, tv_norm
from .tensor import Tensor

# elements differenced per input in the cases that run the perception net
SAMPLE = 24


def _away_from_zero(rng, shape, margin=0.1):
    mag = rng.uniform(margin, 1.0, size=shape)
    return Tensor(np.where(rng.random(shape) < 0.5, -mag, mag))


def _weights(rng, shape, scale=1.0):
    """Random readout weights so that the scalar loss mixes every element."""
    return rng.normal(size=shape) * scale


def _readout(out, w):
    return T.sum_all(out * Tensor(w))


def _phi(seed):
    return PerceptionNet((2, 3, 3, 4, 4), seed=seed, dtype=np.float64)


def case_elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = random_tensor(rng, (2, 3, 4)), random_tensor(rng, (2, 3, 4))
    w = _weights(rng, (2, 3, 4))

    def f(a, b):
        return _readout(a * b + (a - b) * 2.0 - (-a) + (1.0 - b), w)

    return check_gradients(f, [a, b])


def case_abs(seed):
    rng = np.random.default_rng(seed)
    a = _away_from_zero(rng, (3, 5))
    w = _weights(rng, (3, 5))
    return check_gradients(lambda a: _readout(T.abs_(a), w), [a])


def case_reductions(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, (2, 3, 4))

    def f(a):
        return T.sum_all(a * a) + T.mean_all(a * a * a)

    return check_gradients(f, [a])


def case_reshape_index(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, (2, 3, 4))
    w = _weights(rng, (4, 2))

    def f(a):
        return _readout(a.reshape((6, 4))[1:5, ::-1][:, :2].reshape((4, 2)), w)

    return check_gradients(f, [a])


def case_concat(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_tensor(rng, (2, k, 3, 3)) for k in (1, 2, 3))
    w = _weights(rng, (2, 6, 3, 3))
    return check_gradients(lambda a, b, c: _readout(T.concat_channels([a, b, c]), w), [a, b, c])


def case_expand_channels(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, (2, 1, 3, 3))
    w = _weights(rng, (2, 3, 3, 3))
    return check_gradients(lambda a: _readout(T.expand_channels(a, 3), w), [a])


def case_activations(seed):
    rng = np.random.default_rng(seed)
    result = None
    for kind in ("relu", "leaky_relu", "sigmoid", "tanh"):
        a = _away_from_zero(rng, (2, 2, 3, 3)) if kind.endswith("relu") else random_tensor(
            rng, (2, 2, 3, 3), -3, 3)
        w = _weights(rng, (2, 2, 3, 3))
        r = check_gradients(lambda a: _readout(T.activation(a, kind, 0.2), w), [a])
        result = r if result is None else result.merge(r)
    return result


def case_conv2d(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (2, 3, 6, 6))
    wt = random_tensor(rng, (4, 3, 4, 4))
    b = random_tensor(rng, (4,))
    r = _weights(rng, (2, 4, 3, 3))
    return check_gradients(lambda x, wt, b: _readout(T.conv2d(x, wt, b, 2, 1), r), [x, wt, b])


def case_conv2d_same(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (1, 2, 5, 4))
    wt = random_tensor(rng, (3, 2, 3, 3))
    b = random_tensor(rng, (3,))
    r = _weights(rng, (1, 3, 5, 4))
    return check_gradients(lambda x, wt, b: _readout(T.conv2d(x, wt, b, 1, 1), r), [x, wt, b])


def case_conv_transpose2d(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (2, 3, 3, 3))
    wt = random_tensor(rng, (3, 2, 4, 4))
    b = random_tensor(rng, (2,))
    r = _weights(rng, (2, 2, 6, 6))
    return check_gradients(lambda x, wt, b: _readout(T.conv_transpose2d(x, wt, b, 2, 1), r),
                           [x, wt, b])


def case_max_pool(seed):
    rng = np.random.default_rng(seed)
    # distinct values spaced well above the difference step
    vals = rng.permutation(2 * 2 * 4 * 4).reshape(2, 2, 4, 4) * 0.01
    x = Tensor(vals.astype(np.float64))
    r = _weights(rng, (2, 2, 2, 2))
    return check_gradients(lambda x: _readout(T.max_pool2d(x, 2), r), [x])


def case_batch_norm_train(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (3, 2, 3, 3))
    g, b = random_tensor(rng, (2,), 0.5, 1.5), random_tensor(rng, (2,))
    r = _weights(rng, (3, 2, 3, 3))
    return check_gradients(lambda x, g, b: _readout(T.batch_norm2d(x, g, b, True), r), [x, g, b])


def case_batch_norm_eval(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (2, 2, 3, 3))
    g, b = random_tensor(rng, (2,), 0.5, 1.5), random_tensor(rng, (2,))
    mean, var = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)
    r = _weights(rng, (2, 2, 3, 3))

    def f(x, g, b):
        return _readout(T.batch_norm2d(x, g, b, False, mean.copy(), var.copy()), r)

    return check_gradients(f, [x, g, b])


def case_dropout(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (2, 3, 4, 4))
    r = _weights(rng, (2, 3, 4, 4))
    # a fresh generator per call so every evaluation draws the same mask
    return check_gradients(
        lambda x: _readout(T.dropout(x, 0.5, True, np.random.default_rng(seed)), r), [x])


def case_bilinear_resize(seed):
    rng = np.random.default_rng(seed)
    x = random_tensor(rng, (1, 2, 3, 4))
    r = _weights(rng, (1, 2, 5, 7))
    return check_gradients(lambda x: _readout(T.bilinear_resize(x, (5, 7)), r), [x])


def case_perceptual_loss(seed):
    rng = np.random.default_rng(seed)
    phi = _phi(seed)
    a, b = random_tensor(rng, (1, 3, 16, 16), 0, 1), random_tensor(rng, (1, 3, 16, 16), 0, 1)
    weights = LossWeights(tuple(rng.uniform(0.5, 1.5, size=6)))
    return check_gradients(lambda a, b: perceptual_loss(a, b, range(6), weights, phi), [a, b],
                           sample=SAMPLE, rng=rng)


def case_tv_norm(seed):
    rng = np.random.default_rng(seed)
    # a monotone ramp plus noise keeps every forward difference away from zero
    base = np.add.outer(np.arange(5), np.arange(6)) * 0.3
    alpha = Tensor((base + rng.uniform(-0.1, 0.1, size=(5, 6)))[None, None])
    return check_gradients(tv_norm, [alpha])


def case_composite(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, (2, 1, 4, 4), 0, 1)
    w, c = random_tensor(rng, (2, 3, 4, 4), 0, 1), random_tensor(rng, (2, 3, 4, 4), 0, 1)
    r = _weights(rng, (2, 3, 4, 4))
    return check_gradients(lambda a, w, c: _readout(composite(a, w, c), r), [a, w, c])


def case_coarse_loss(seed):
    """The full coarse objective with respect to the generator outputs (I', M)."""
    rng = np.random.default_rng(seed)
    phi = _phi(seed)
    image = random_tensor(rng, (2, 3, 16, 16), 0.05, 0.95)
    mask = random_tensor(rng, (2, 1, 16, 16), 0.05, 0.95)
    target = random_tensor(rng, (2, 3, 16, 16), 0, 1)
    target_mask = Tensor((rng.random((2, 1, 16, 16)) < 0.5).astype(np.float64))
    weights = LossWeights(tuple(rng.uniform(0.5, 1.5, size=6)))

    def f(image, mask):
        return coarse_loss(CoarseOutput(image, mask), target, target_mask, weights, phi)

    return check_gradients(f, [image, mask], sample=SAMPLE, rng=rng)


def case_refinement_loss(seed):
    """The full refinement objective with respect to every refinement weight."""
    rng = np.random.default_rng(seed)
    phi = _phi(seed)
    net = RefinementNet(filters=4, seed=seed, dtype=np.float64)
    warped = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    coarse = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    target = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    config = RefinementLossConfig(lambda_tv=5e-3)
    params = net.parameters()

    def f(*_):
        alpha = refine_forward(warped, coarse, net)
        return refinement_loss(composite(alpha, warped, coarse), target, alpha, config, phi)

    return check_gradients(f, params, sample=SAMPLE, rng=rng)


CASES = {
    "elementwise": case_elementwise,
    "abs": case_abs,
    "reductions": case_reductions,
    "reshape_index": case_reshape_index,
    "concat_channels": case_concat,
    "expand_channels": case_expand_channels,
    "activations": case_activations,
    "conv2d_stride2": case_conv2d,
    "conv2d_same": case_conv2d_same,
    "conv_transpose2d": case_conv_transpose2d,
    "max_pool2d": case_max_pool,
    "batch_norm_train": case_batch_norm_train,
    "batch_norm_eval": case_batch_norm_eval,
    "dropout": case_dropout,
    "bilinear_resize": case_bilinear_resize,
    "perceptual_loss": case_perceptual_loss,
    "tv_norm": case_tv_norm,
    "composite": case_composite,
    "coarse_loss": case_coarse_loss,
    "refinement_loss": case_refinement_loss,
}


def run_suite(seeds=range(10), cases=None):
    """Worst error per case over ``seeds``; returns (results, seconds)."""
    start = time.perf_counter()
    results = []
    for name in cases or CASES:
        merged = GradCheckResult(name, 0.0)
        for s in seeds:
            merged = merged.merge(CASES[name](int(s)))
        results.append(merged)
    return results, time.perf_counter() - start
