"""Fixtures, file formats, metrics and the two-stage pipeline at toy scale."""

import hashlib

import numpy as np
import pytest
from skimage.color import rgb2hsv

from viton import files
from viton import pipeline as P
from viton.coarse import NonFiniteError
from viton.config import DESK, FULL
from viton.data import generate_fixtures, list_samples, load_sample, make_sample
from viton.report import parse_record, read_log, smooth
from viton.representation import UPPER_CLOTHES, validate_parse
from viton.warp import extract_foreground_mask

# tiny models so the pipeline tests stay fast
TOY = DESK.replace(width_multiplier=1 / 16, perception_width=1 / 16, refine_filters=4,
                   coarse_steps=4, refine_steps=3, batch_size=2)


# ---- fixtures and files ---------------------------------------------------

def test_generated_fixtures_are_complete(tmp_path):
    paths = generate_fixtures(16, 7, tmp_path)
    assert len(paths) == 16 == len(list_samples(tmp_path))
    for p in paths:
        s = load_sample(p)
        assert s.person.shape == (64, 64, 3) and s.product.shape == (64, 64, 3)
        assert s.parse.shape == (64, 64)
        validate_parse(s.parse)
        assert len(s.keypoints.points) == 18
        assert (s.parse == UPPER_CLOTHES).any()


def test_fixtures_are_byte_identical_per_seed(tmp_path):
    generate_fixtures(3, 7, tmp_path / "a")
    generate_fixtures(3, 7, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*.*")):
        twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
        assert f.read_bytes() == twin.read_bytes()


def _mean_hue(image, mask):
    angle = 2 * np.pi * rgb2hsv(image)[..., 0][mask]
    return np.angle(np.mean(np.exp(1j * angle))) / (2 * np.pi) % 1.0


def test_person_and_product_share_the_garment():
    for i in range(16):
        s = make_sample(7, i, (64, 64))
        a = _mean_hue(s.person, s.parse == UPPER_CLOTHES)
        b = _mean_hue(s.product, extract_foreground_mask(s.product))
        assert min(abs(a - b), 1 - abs(a - b)) < 0.05


def test_image_write_rounds_half_up(tmp_path):
    img = np.zeros((1, 3, 3), np.float32)
    img[0, 0] = 0.5 / 255  # exactly half a level
    img[0, 1] = 0.49 / 255
    img[0, 2] = 1.0
    files.write_image(tmp_path / "x.png", img)
    back = np.round(files.read_image(tmp_path / "x.png") * 255).astype(int)
    assert back[0, 0, 0] == 1 and back[0, 1, 0] == 0 and back[0, 2, 0] == 255


def test_channel_first_images_and_masks(tmp_path, rng):
    img = rng.random((3, 5, 4)).astype(np.float32)
    files.write_image(tmp_path / "c.png", img)
    assert files.read_image(tmp_path / "c.png").shape == (5, 4, 3)
    files.write_mask(tmp_path / "m.png", np.array([[[0.2, 0.8]]]))
    assert files.read_mask(tmp_path / "m.png").tolist() == [[0.0, 1.0]]


def test_keypoints_round_trip(tmp_path, desk_sample):
    files.write_keypoints(tmp_path / "k.json", desk_sample.keypoints)
    back = files.read_keypoints(tmp_path / "k.json")
    assert np.allclose(back.points, desk_sample.keypoints.points, atol=1e-4)


# ---- metrics --------------------------------------------------------------

def test_metric_examples(rng):
    img = rng.random((3, 8, 8))
    region = np.ones((1, 8, 8))
    assert P.mae(img, img) == 0.0 and P.mae(img, img, region) == 0.0
    assert P.psnr(img, img) == P.PSNR_CAP
    assert P.iou(region, region) == 1.0
    assert P.mae(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 1.0
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    a[:2], b[2:] = 1, 1
    assert P.iou(a, b) == 0.0


def test_region_mae_ignores_outside():
    a, b = np.zeros((3, 4, 4)), np.zeros((3, 4, 4))
    b[:, :2] = 1.0
    region = np.zeros((1, 4, 4))
    region[:, 2:] = 1
    assert P.mae(a, b, region) == 0.0 and P.mae(a, b) == 0.5


def test_shuffled_pairing_is_a_seeded_derangement():
    samples = list(range(9))
    perm = P.pair_products(samples, "shuffled", 4)
    assert sorted(perm) == samples and all(p != i for i, p in enumerate(perm))
    assert perm == P.pair_products(samples, "shuffled", 4)
    assert P.pair_products(samples, "matched", 4) == samples


def test_log_records_round_trip():
    line = P.logfmt(stage="coarse", step=3, loss=0.125, note="two words")
    assert parse_record(line) == {"stage": "coarse", "step": 3, "loss": 0.125, "note": "two words"}


def test_smoothing_window():
    assert np.allclose(smooth(np.arange(10.0), 5), np.arange(2.0, 8.0))
    assert len(smooth([1.0, 2.0], 5)) == 2


# ---- training and inference -----------------------------------------------

@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("work")
    samples = P.prepare_in_memory([make_sample(7, i, (64, 64)) for i in range(3)], TOY.size)
    gen, net = P.train(TOY, samples, work)
    return work, samples, gen, net


def _digest(module):
    h = hashlib.sha256()
    for name, arr in module.state_dict().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_training_writes_artifacts(toy_run):
    work, samples, _, _ = toy_run
    for name in ("coarse.ckpt", "refine.ckpt", "logs/coarse.log", "logs/refine.log"):
        assert (work / name).exists(), name
    records = read_log(work / "logs" / "coarse.log")
    assert [r["step"] for r in records] == [1, 2, 3, 4]
    assert all(r["stage"] == "coarse" and np.isfinite(r["loss"]) for r in records)


def test_refinement_never_touches_the_generator(toy_run):
    work, samples, gen, _ = toy_run
    before = _digest(gen)
    warps = [P.WarpedSample(s.name, s.person, s.target_mask, s.person, s.target_mask)
             for s in samples]
    P.train_refine(TOY, samples, warps, work / "again")
    assert _digest(gen) == before


def test_forced_alpha_one_returns_warped_clothing(toy_run):
    _, samples, gen, net = toy_run
    s = samples[0]
    r = P.run_inference(TOY, s, s.product, gen, net, alpha_override=1.0)
    assert not r.fell_back
    assert np.array_equal(r.final, r.warped)
    assert r.representation.shape[0] == 22


def test_inference_falls_back_without_a_mask(toy_run, monkeypatch):
    _, samples, gen, net = toy_run

    def no_mask(*args, **kwargs):
        raise P.WarpError("predicted clothing mask is empty after thresholding")

    monkeypatch.setattr(P, "warp_clothing", no_mask)
    r = P.run_inference(TOY, samples[0], samples[0].product, gen, net)
    assert r.fell_back and "warp failed" in r.warnings[0]
    assert np.array_equal(r.final, r.coarse_image)


def test_full_resolution_inference(desk_sample):
    cfg = FULL.replace(width_multiplier=1 / 64, refine_filters=4)
    sample = P.prepare_sample(desk_sample, cfg.size)
    r = P.run_inference(cfg, sample, desk_sample.product, P.build_generator(cfg),
                        P.build_refiner(cfg), alpha_override=1.0)
    assert r.final.shape == (3, 256, 192) and r.representation.shape == (22, 256, 192)


def test_non_finite_loss_aborts_with_step(monkeypatch, tmp_path):
    samples = P.prepare_in_memory([make_sample(7, 0, (64, 64))], TOY.size)
    calls = {"n": 0}
    real = P.CoarseTrainer.step

    def flaky(self, *batch):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NonFiniteError("non-finite coarse loss")
        return real(self, *batch)

    monkeypatch.setattr(P.CoarseTrainer, "step", flaky)
    with pytest.raises(P.TrainingAborted) as err:
        P.train_coarse(TOY, samples, tmp_path)
    assert err.value.step == 3 and "step 3" in str(err.value)


def test_prepare_caches_and_reloads(tmp_path):
    generate_fixtures(2, 7, tmp_path / "data")
    prepared = P.prepare(TOY, tmp_path / "data", tmp_path / "work")
    loaded = P.load_prepared(tmp_path / "work")
    assert [s.name for s in loaded] == [s.name for s in prepared]
    assert all(np.array_equal(a.representation, b.representation) for a, b in zip(prepared, loaded))
    with pytest.raises(FileNotFoundError):
        P.load_prepared(tmp_path / "nowhere")


def test_single_sample_coarse_losses_fall_steadily(tmp_path):
    """Over the first 300 steps each loss beats the one 50 steps earlier."""
    cfg = DESK.replace(batch_size=1)
    samples = P.prepare_in_memory([make_sample(0, 0, (64, 64))], cfg.size)
    _, losses = P.train_coarse(cfg, samples, tmp_path, steps=300)
    losses = np.asarray(losses)
    assert np.all(losses[50:] < losses[:-50])
    assert np.all(np.diff(smooth(read_log_losses(tmp_path), 50)) <= 0)


def read_log_losses(work):
    return [r["loss"] for r in read_log(work / "logs" / "coarse.log")]
