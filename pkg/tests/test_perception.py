import numpy as np
import pytest

from viton import checkpoint as ck
from viton import tensor as T
from viton.perception import NUM_LEVELS, PerceptionNet, perception_features
from viton.tensor import Tensor


@pytest.fixture(scope="module")
def phi():
    return PerceptionNet.scaled(1 / 16)


def test_level_zero_is_the_input(phi, rng):
    x = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
    (f0,) = perception_features(x, {0}, phi)
    assert f0 is x


def test_six_levels_and_deep_size():
    phi = PerceptionNet.scaled(1 / 32)
    feats = phi.features(Tensor(np.random.default_rng(0).random((1, 3, 256, 192)).astype(np.float32)))
    assert sorted(feats) == list(range(NUM_LEVELS))
    assert feats[5].shape[2:] == (16, 12)


def test_same_seed_same_features(rng):
    x = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
    a = PerceptionNet.scaled(1 / 16, seed=3).features(x, [3])[3].data
    b = PerceptionNet.scaled(1 / 16, seed=3).features(x, [3])[3].data
    assert np.array_equal(a, b)


def test_frozen_weights_get_no_gradient(phi, rng):
    x = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32), requires_grad=True)
    T.sum_all(phi.features(x, [2])[2]).backward()
    assert x.grad is not None and np.abs(x.grad).sum() > 0
    assert all(p.grad is None and not p.requires_grad for p in phi.parameters())


def test_features_finite_on_extremes(phi):
    for v in (0.0, 1.0):
        feats = phi.features(Tensor(np.full((1, 3, 16, 16), v, np.float32)))
        assert all(np.all(np.isfinite(f.data)) for f in feats.values())


def test_loaded_weights_are_reproducible(tmp_path, phi, rng):
    path = tmp_path / "phi.ckpt"
    ck.save_checkpoint(path, ck.capture(phi))
    x = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
    outs = []
    for _ in range(2):
        other = PerceptionNet.scaled(1 / 16, seed=99)
        ck.restore(other, ck.load_checkpoint(path))
        outs.append(other.features(x, [4])[4].data)
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], phi.features(x, [4])[4].data)


def test_bad_levels_and_sizes(phi):
    with pytest.raises(ValueError):
        phi.features(Tensor(np.zeros((1, 3, 16, 16))), [6])
    with pytest.raises(T.ShapeError):
        phi.features(Tensor(np.zeros((1, 3, 20, 16))), [1])
