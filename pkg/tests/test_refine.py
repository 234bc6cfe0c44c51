import numpy as np
import pytest

from viton import tensor as T
from viton.coarse import perceptual_loss
from viton.perception import PerceptionNet
from viton.refine import (
    LAMBDA_TV, LAMBDA_WARP, REFINE_LEVELS, RefinementLossConfig, RefinementNet, RefineTrainer,
    composite, refine_forward, refinement_loss, tv_norm,
)
from viton.tensor import Tensor


@pytest.fixture(scope="module")
def phi():
    return PerceptionNet.scaled(1 / 16)


def images(rng, n=1, size=(16, 16)):
    return tuple(rng.random((n, 3) + size).astype(np.float32) for _ in range(3))


def test_alpha_shape_at_full_resolution(rng):
    net = RefinementNet(filters=4)
    warped, coarse, _ = images(rng, size=(256, 192))
    alpha = refine_forward(warped, coarse, net)
    assert alpha.shape == (1, 1, 256, 192)
    assert net.convs[0].in_channels == 6 and net.head.out_channels == 1
    assert net.head.weight.shape[2:] == (1, 1)


def test_zero_network_gives_half(rng):
    net = RefinementNet(filters=4)
    for p in net.parameters():
        p.data[...] = 0
    alpha = refine_forward(*images(rng)[:2], net)
    assert np.all(alpha.data == 0.5)


def test_alpha_deterministic_and_open_interval(rng):
    net = RefinementNet(filters=8, seed=2)
    w, c, _ = images(rng)
    a, b = refine_forward(w, c, net).data, refine_forward(w, c, net).data
    assert np.array_equal(a, b)
    assert a.min() > 0 and a.max() < 1


def test_composite_endpoints_exact(rng):
    w, c, _ = images(rng)
    ones = np.ones((1, 1, 16, 16), np.float32)
    assert np.array_equal(composite(ones, w, c).data, w)
    assert np.array_equal(composite(0 * ones, w, c).data, c)
    assert np.array_equal(composite(0.5 * ones, w, c).data, (w + c) / 2)


def test_composite_is_convex(rng):
    w, c, _ = images(rng)
    alpha = rng.random((1, 1, 16, 16)).astype(np.float32)
    out = composite(alpha, w, c).data
    lo, hi = np.minimum(w, c), np.maximum(w, c)
    assert np.all(out >= lo - 1e-6) and np.all(out <= hi + 1e-6)


def test_composite_shape_mismatch(rng):
    w, c, _ = images(rng)
    with pytest.raises(T.ShapeError):
        composite(np.ones((1, 1, 16, 16)), w, c[:, :, :8])


def test_tv_norm_examples(rng):
    assert float(tv_norm(np.full((1, 1, 8, 8), 0.3)).data) == 0.0
    half = np.zeros((1, 1, 10, 7))
    half[..., 5:, :] = 1.0
    assert float(tv_norm(half).data) == 7.0
    a = rng.random((1, 1, 9, 9))
    assert float(tv_norm(a).data) == pytest.approx(float(tv_norm(1 - a).data), rel=1e-12)


def test_tv_norm_batch_mean():
    half = np.zeros((2, 1, 4, 5))
    half[0, :, 2:] = 1.0
    assert float(tv_norm(half).data) == 2.5


def test_tv_norm_zero_subgradient_at_ties():
    a = Tensor(np.full((1, 1, 4, 4), 0.5), requires_grad=True)
    tv_norm(a).backward()
    assert not a.grad.any()


def test_loss_config_defaults():
    cfg = RefinementLossConfig()
    assert (cfg.lambda_warp, cfg.lambda_tv, cfg.levels) == (0.1, 5e-6, (3, 4, 5))
    assert (LAMBDA_WARP, LAMBDA_TV, REFINE_LEVELS) == (0.1, 5e-6, (3, 4, 5))
    with pytest.raises(ValueError):
        RefinementLossConfig(lambda_warp=-0.1)


def test_loss_at_perfect_output(phi, rng):
    target = rng.random((1, 3, 16, 16)).astype(np.float32)
    alpha = np.full((1, 1, 16, 16), 0.5, np.float32)
    loss = refinement_loss(target, target, alpha, RefinementLossConfig(), phi)
    assert float(loss.data) == pytest.approx(-0.05)
    off = RefinementLossConfig(lambda_warp=0.0, lambda_tv=0.0)
    assert float(refinement_loss(target, target, alpha, off, phi).data) == 0.0


def test_raising_alpha_lowers_loss(phi, rng):
    final, target, _ = images(rng)
    cfg = RefinementLossConfig()
    values = [float(refinement_loss(final, target, np.full((1, 1, 16, 16), a, np.float32), cfg, phi).data)
              for a in (0.2, 0.4, 0.6)]
    assert values[0] > values[1] > values[2]


def test_deep_levels_tolerate_small_shifts(desk_sample):
    # a one-pixel misalignment costs relatively less at levels 3-5 than at 1-2
    phi = PerceptionNet.scaled(1 / 8)
    image = desk_sample.person.transpose(2, 0, 1)[None]
    for shift in ((0, 1), (1, 0)):
        moved = np.roll(image, shift, axis=(2, 3))
        f, g = phi.features(Tensor(image)), phi.features(Tensor(moved))

        def relative(levels):
            return (sum(np.abs(f[l].data - g[l].data).mean() for l in levels)
                    / sum(np.abs(f[l].data).mean() for l in levels))

        assert relative(REFINE_LEVELS) < relative((1, 2))


def _run(seed, steps, rng_seed=3):
    rng = np.random.default_rng(rng_seed)
    w, c, target = images(rng, n=2)
    net = RefinementNet(filters=4, seed=seed)
    trainer = RefineTrainer(net, PerceptionNet.scaled(1 / 16))
    return net, [trainer.step(w, c, target) for _ in range(steps)]


def test_refine_training_is_reproducible():
    n1, l1 = _run(1, 3)
    n2, l2 = _run(1, 3)
    assert l1 == l2
    assert all(np.array_equal(a.data, b.data) for a, b in zip(n1.parameters(), n2.parameters()))


def test_refine_step_leaves_inputs_untouched(rng):
    w, c, target = images(rng)
    c_tensor = Tensor(c.copy(), requires_grad=True)
    trainer = RefineTrainer(RefinementNet(filters=4), PerceptionNet.scaled(1 / 16))
    trainer.step(w, c_tensor, target)
    assert c_tensor.grad is None and np.array_equal(c_tensor.data, c)
