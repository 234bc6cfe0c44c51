import struct

import numpy as np
import pytest

from viton import checkpoint as ck
from viton import tensor as T
from viton.coarse import CoarseGenerator, CoarseTrainer, coarse_forward
from viton.perception import PerceptionNet
from viton.refine import RefinementNet


@pytest.fixture
def trained(rng):
    """A small generator after two Adam steps, so moments are nonzero."""
    gen = CoarseGenerator(width=1 / 16, seed=1)
    trainer = CoarseTrainer(gen, PerceptionNet.scaled(1 / 16))
    c = rng.random((2, 3, 64, 64)).astype(np.float32)
    p = (rng.random((2, 22, 64, 64)) > 0.8).astype(np.float32)
    target = rng.random((2, 3, 64, 64)).astype(np.float32)
    m0 = (rng.random((2, 1, 64, 64)) > 0.5).astype(np.float32)
    for _ in range(2):
        trainer.step(c, p, target, m0)
    return gen, trainer.optimizer, (c, p)


def test_save_load_save_is_byte_identical(tmp_path, trained):
    gen, opt, _ = trained
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ck.save_checkpoint(a, ck.capture(gen, opt, step=2, seed=1, meta={"kind": "coarse"}))
    loaded = ck.load_checkpoint(a)
    ck.save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert (loaded.step, loaded.seed, loaded.meta) == (2, 1, {"kind": "coarse"})
    assert loaded.optimizer.step_count == 2


def test_restored_forward_matches(tmp_path, trained):
    gen, opt, (c, p) = trained
    path = tmp_path / "g.ckpt"
    ck.save_checkpoint(path, ck.capture(gen, opt))
    gen.eval()
    before = coarse_forward(c, p, gen)
    other = CoarseGenerator(width=1 / 16, seed=9)
    ck.restore(other, ck.load_checkpoint(path)).eval()
    after = coarse_forward(c, p, other)
    assert np.array_equal(before.image.data, after.image.data)
    assert np.array_equal(before.mask.data, after.mask.data)


def test_optimizer_state_restores(tmp_path, trained):
    gen, opt, _ = trained
    path = tmp_path / "g.ckpt"
    ck.save_checkpoint(path, ck.capture(gen, opt))
    other = CoarseGenerator(width=1 / 16, seed=9)
    from viton.optim import Adam
    other_opt = Adam(other.parameters())
    ck.restore(other, ck.load_checkpoint(path), other_opt)
    assert other_opt.state.step_count == 2
    assert all(np.array_equal(a, b) for a, b in zip(other_opt.state.first_moment, opt.state.first_moment))


def test_truncation_names_offset(tmp_path):
    blob = ck.to_bytes(ck.capture(RefinementNet(filters=4)))
    for cut in (4, 30, len(blob) // 2, len(blob) - 1):
        with pytest.raises(ck.TruncatedCheckpointError, match="offset") as err:
            ck.from_bytes(blob[:cut])
        assert 0 <= err.value.offset <= cut


def test_bad_magic_and_version():
    blob = ck.to_bytes(ck.capture(RefinementNet(filters=4)))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.from_bytes(b"NOTACKPT" + blob[8:])
    bumped = blob[:8] + struct.pack("<I", 7) + blob[12:]
    with pytest.raises(ck.VersionMismatchError) as err:
        ck.from_bytes(bumped)
    assert (err.value.found, err.value.expected) == (7, ck.VERSION)
    assert "7" in str(err.value) and str(ck.VERSION) in str(err.value)


def test_trailing_bytes_rejected():
    blob = ck.to_bytes(ck.capture(RefinementNet(filters=4)))
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.from_bytes(blob + b"\0")


def test_unknown_parameter_name():
    state = ck.capture(RefinementNet(filters=4))
    state.records["ghost.weight"] = np.zeros(3, np.float32)
    with pytest.raises(ck.CheckpointError, match="unknown"):
        ck.restore(RefinementNet(filters=4), state)


def test_shape_mismatch_is_reported():
    with pytest.raises(ck.CheckpointError):
        ck.restore(RefinementNet(filters=8), ck.capture(RefinementNet(filters=4)))


def test_records_include_batch_norm_buffers():
    names = ck.capture(CoarseGenerator(width=1 / 16)).records
    assert any(n.endswith("running_mean") for n in names)
    assert all(a.dtype == np.float32 for a in names.values())
