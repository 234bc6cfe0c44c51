"""Two-stage training, inference and evaluation on fixture directories.

Work directory layout::

    prepared/<name>.npz    cached representation p, target mask M0, I, c
    coarse.ckpt            stage-1 generator (with optimizer state)
    warped/<name>.npz      c' and M computed with the frozen generator
    refine.ckpt            stage-2 refinement net
    logs/<stage>.log       one ``key=value`` record per training step
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import tensor as T
from .coarse import CoarseGenerator, CoarseTrainer, LossWeights, NonFiniteError, coarse_forward
from .data import list_samples, load_sample
from .perception import PerceptionNet
from .refine import (RefinementLossConfig, RefinementNet, RefineTrainer, composite,
                     refine_forward)
from .representation import nearest_resize, build_representation, clothing_mask
from .tensor import Tensor
from .warp import WarpError, warp_clothing

log = logging.getLogger("viton.pipeline")

PSNR_CAP = 100.0


class TrainingAborted(RuntimeError):
    def __init__(self, stage, step, cause):
        super().__init__(f"{stage} training aborted at step {step}: {cause}")
        self.stage, self.step = stage, step


def logfmt(**fields):
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.8g}"
        v = str(v)
        parts.append(f"{k}={v}" if v and " " not in v and '"' not in v else f'{k}="{v}"')
    return " ".join(parts)


# ---- preparation ----------------------------------------------------------

@dataclass
class PreparedSample:
    name: str
    representation: np.ndarray  # 22×m×n
    target_mask: np.ndarray  # 1×m×n, M0
    person: np.ndarray  # 3×m×n, I
    product: np.ndarray  # H×W×3, c at native size

    def product_input(self, size):
        """c resized to the generator input size, channel-first."""
        c = Tensor(self.product.transpose(2, 0, 1)[None].astype(np.float32))
        return T.bilinear_resize(c, size).data[0]


def prepare_sample(sample, size):
    rep = build_representation(sample.keypoints, sample.parse, sample.person, size)
    person = T.bilinear_resize(Tensor(sample.person.transpose(2, 0, 1)[None]), size).data[0]
    m0 = nearest_resize(clothing_mask(sample.parse), size)[None]
    return PreparedSample(sample.name, rep.astype(np.float32), m0.astype(np.float32),
                          person.astype(np.float32), sample.product.astype(np.float32))


def prepare(config, data_dir=None, work_dir=None):
    """Build and cache p and M0 for every fixture under ``data_dir``."""
    data_dir = Path(data_dir or config.data_dir)
    out = Path(work_dir or config.work_dir) / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    prepared = []
    for d in list_samples(data_dir):
        s = prepare_sample(load_sample(d), config.size)
        np.savez(out / f"{s.name}.npz", representation=s.representation,
                 target_mask=s.target_mask, person=s.person, product=s.product)
        prepared.append(s)
    log.info("prepared %d samples into %s", len(prepared), out)
    return prepared


def load_prepared(work_dir):
    files = sorted((Path(work_dir) / "prepared").glob("*.npz"))
    if not files:
        raise FileNotFoundError(f"no prepared samples under {work_dir}; run prepare first")
    out = []
    for f in files:
        with np.load(f) as z:
            out.append(PreparedSample(f.stem, z["representation"], z["target_mask"],
                                      z["person"], z["product"]))
    return out


def prepare_in_memory(samples, size):
    return [prepare_sample(s, size) for s in samples]


# ---- models ---------------------------------------------------------------

def build_perception(config):
    phi = PerceptionNet.scaled(config.perception_width, seed=config.seed)
    if config.perception_weights:
        ck.restore(phi, ck.load_checkpoint(config.perception_weights))
        phi.freeze()
    return phi


def build_generator(config):
    return CoarseGenerator(width=config.width_multiplier, seed=config.seed)


def build_refiner(config):
    return RefinementNet(filters=config.refine_filters, seed=config.seed + 1)


def _batches(n, batch_size, seed, stream):
    """Endless deterministic minibatch index stream, reshuffled every epoch."""
    rng = np.random.default_rng([seed, stream])
    batch_size = min(batch_size, n)
    order, pos = rng.permutation(n), 0
    while True:
        if pos + batch_size > n:
            order, pos = rng.permutation(n), 0
        yield order[pos:pos + batch_size]
        pos += batch_size


def _stack(arrays):
    return np.stack(arrays).astype(np.float32)


def _write_log(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(r + "\n" for r in records), encoding="utf-8")


# ---- stage 1 --------------------------------------------------------------

def train_coarse(config, samples, work_dir=None, phi=None, steps=None):
    """Train the generator; returns ``(generator, losses)`` and writes coarse.ckpt."""
    work = Path(work_dir or config.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    phi = phi or build_perception(config)
    gen = build_generator(config)
    trainer = CoarseTrainer(gen, phi, LossWeights(tuple(config.level_weights)), seed=config.seed)
    c_all = [s.product_input(config.size) for s in samples]
    steps = steps or config.coarse_steps
    batches = _batches(len(samples), config.batch_size, config.seed, 1)
    losses, records = [], []
    for step in range(1, steps + 1):
        idx = next(batches)
        batch = (_stack([c_all[i] for i in idx]),
                 _stack([samples[i].representation for i in idx]),
                 _stack([samples[i].person for i in idx]),
                 _stack([samples[i].target_mask for i in idx]))
        try:
            loss = trainer.step(*batch)
        except NonFiniteError as e:
            raise TrainingAborted("coarse", step, e) from e
        losses.append(loss)
        records.append(logfmt(stage="coarse", step=step, loss=loss))
        log.debug(records[-1])
    gen.eval()
    ck.save_checkpoint(work / "coarse.ckpt", ck.capture(
        gen, trainer.optimizer, steps, config.seed,
        {"kind": "coarse", "width_multiplier": config.width_multiplier}))
    _write_log(work / "logs" / "coarse.log", records)
    log.info("coarse stage: %d steps, loss %.4f -> %.4f", steps, losses[0], losses[-1])
    return gen, losses


def load_generator(config, path):
    gen = build_generator(config)
    ck.restore(gen, ck.load_checkpoint(path))
    return gen.eval()


def load_refiner(config, path):
    net = build_refiner(config)
    ck.restore(net, ck.load_checkpoint(path))
    return net.eval()


def coarse_outputs(gen, samples, size):
    """Eval-mode I' and M for each sample, as (3×m×n, 1×m×n) arrays."""
    gen.eval()
    out = []
    for s in samples:
        o = coarse_forward(s.product_input(size)[None], s.representation[None], gen)
        out.append((o.image.data[0], o.mask.data[0]))
    return out


@dataclass
class WarpedSample:
    name: str
    warped: np.ndarray | None  # 3×m×n, None when warping failed
    warped_mask: np.ndarray | None
    coarse_image: np.ndarray
    coarse_mask: np.ndarray
    error: str = ""


def warp_sample(config, product, coarse_mask):
    res = warp_clothing(product, coarse_mask[0], k=config.contour_points, lam=config.tps_lambda,
                        out_size=config.size)
    return res.image.transpose(2, 0, 1).astype(np.float32), res.mask[None].astype(np.float32)


def precompute_warps(config, gen, samples, work_dir=None):
    """c' for every sample from the frozen generator's mask; cached as npz."""
    out_dir = Path(work_dir or config.work_dir) / "warped"
    out_dir.mkdir(parents=True, exist_ok=True)
    result = []
    for s, (img, mask) in zip(samples, coarse_outputs(gen, samples, config.size)):
        try:
            warped, wmask = warp_sample(config, s.product, mask)
            item = WarpedSample(s.name, warped, wmask, img, mask)
            np.savez(out_dir / f"{s.name}.npz", warped=warped, warped_mask=wmask,
                     coarse_image=img, coarse_mask=mask)
        except WarpError as e:
            log.warning("warp failed for %s: %s", s.name, e)
            item = WarpedSample(s.name, None, None, img, mask, str(e))
        result.append(item)
    return result


# ---- stage 2 --------------------------------------------------------------

def refine_config(config):
    return RefinementLossConfig(config.lambda_warp, config.lambda_tv,
                                weights=LossWeights(tuple(config.refine_level_weights)))


def train_refine(config, samples, warps, work_dir=None, phi=None, steps=None):
    """Train the refinement net on precomputed (c', I', I); writes refine.ckpt."""
    work = Path(work_dir or config.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    phi = phi or build_perception(config)
    usable = [(s, w) for s, w in zip(samples, warps) if w.warped is not None]
    if not usable:
        raise WarpError("no sample could be warped; refinement has nothing to train on")
    net = build_refiner(config)
    trainer = RefineTrainer(net, phi, refine_config(config))
    steps = steps or config.refine_steps
    batches = _batches(len(usable), config.batch_size, config.seed, 2)
    losses, records = [], []
    for step in range(1, steps + 1):
        idx = next(batches)
        batch = (_stack([usable[i][1].warped for i in idx]),
                 _stack([usable[i][1].coarse_image for i in idx]),
                 _stack([usable[i][0].person for i in idx]))
        try:
            loss = trainer.step(*batch)
        except NonFiniteError as e:
            raise TrainingAborted("refine", step, e) from e
        losses.append(loss)
        records.append(logfmt(stage="refine", step=step, loss=loss))
        log.debug(records[-1])
    net.eval()
    ck.save_checkpoint(work / "refine.ckpt", ck.capture(
        net, trainer.optimizer, steps, config.seed,
        {"kind": "refine", "filters": config.refine_filters}))
    _write_log(work / "logs" / "refine.log", records)
    log.info("refine stage: %d steps on %d samples, loss %.4f -> %.4f", steps, len(usable),
             losses[0], losses[-1])
    return net, losses


def train(config, samples=None, work_dir=None):
    """Both stages in order; returns (generator, refiner)."""
    work_dir = work_dir or config.work_dir
    samples = samples if samples is not None else load_prepared(work_dir)
    phi = build_perception(config)
    gen, _ = train_coarse(config, samples, work_dir, phi)
    warps = precompute_warps(config, gen, samples, work_dir)
    net, _ = train_refine(config, samples, warps, work_dir, phi)
    return gen, net


# ---- inference and metrics ------------------------------------------------

@dataclass
class InferenceResult:
    name: str
    representation: np.ndarray  # p, 22×m×n
    coarse_image: np.ndarray  # I', 3×m×n
    coarse_mask: np.ndarray  # M, 1×m×n
    warped: np.ndarray  # c', 3×m×n (zeros when warping failed)
    alpha: np.ndarray  # 1×m×n
    final: np.ndarray  # I hat, 3×m×n
    warnings: list = field(default_factory=list)

    @property
    def fell_back(self):
        return bool(self.warnings)


def run_inference(config, sample, product, gen, net, alpha_override=None):
    """Coarse synthesis, warp, refine and composite for one prepared sample.

    ``product`` is the H×W×3 clothing image to put on the person (pass
    ``sample.product`` for the matched pairing).  ``alpha_override`` replaces
    the network's mask with a constant, for checking the composite.
    """
    size = config.size
    c = T.bilinear_resize(Tensor(product.transpose(2, 0, 1)[None].astype(np.float32)), size)
    gen.eval()
    out = coarse_forward(c, sample.representation[None], gen)
    image, mask = out.image.data[0], out.mask.data[0]
    warnings = []
    try:
        warped, _ = warp_sample(config, product, mask)
    except WarpError as e:
        warnings.append(f"warp failed, using coarse result: {e}")
        log.warning("%s: %s", sample.name, warnings[-1])
        warped = None
    if warped is None:
        alpha = np.zeros_like(mask)
        return InferenceResult(sample.name, sample.representation, image, mask,
                               np.zeros_like(image), alpha, image.copy(), warnings)
    if alpha_override is not None:
        alpha = np.full_like(mask, alpha_override)
    else:
        alpha = refine_forward(warped[None], image[None], net).data[0]
    final = composite(alpha[None], warped[None], image[None]).data[0]
    return InferenceResult(sample.name, sample.representation, image, mask, warped, alpha,
                           final, warnings)


def mae(a, b, region=None):
    diff = np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))
    if region is None:
        return float(diff.mean())
    region = np.broadcast_to(np.asarray(region, bool), diff.shape)
    if not region.any():
        return 0.0
    return float(diff[region].mean())


def psnr(a, b):
    mse = float(((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def iou(a, b):
    a, b = np.asarray(a) >= 0.5, np.asarray(b) >= 0.5
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def sample_metrics(final, target, region, mask=None, target_mask=None, coarse=None):
    rec = {"mae": mae(final, target), "mae_region": mae(final, target, region),
           "psnr": psnr(final, target)}
    if mask is not None and target_mask is not None:
        rec["iou"] = iou(mask, target_mask)
    if coarse is not None:
        rec["coarse_mae_region"] = mae(coarse, target, region)
    return rec


def evaluate(results):
    """Mean metrics over ``(InferenceResult, PreparedSample)`` pairs."""
    if not results:
        raise ValueError("nothing to evaluate")
    per = []
    for r, s in results:
        rec = sample_metrics(r.final, s.person, s.target_mask, r.coarse_mask, s.target_mask,
                             r.coarse_image)
        rec["name"] = r.name
        rec["fallback"] = int(r.fell_back)
        per.append(rec)
    keys = ("mae", "mae_region", "psnr", "iou", "coarse_mae_region")
    summary = {k: float(np.mean([p[k] for p in per])) for k in keys}
    summary["refined_wins"] = float(np.mean([p["mae_region"] < p["coarse_mae_region"]
                                             for p in per]))
    summary["count"] = len(per)
    return summary, per


def pair_products(samples, pairing, seed):
    """Product index for each sample: itself, or a seeded derangement."""
    n = len(samples)
    if pairing == "matched" or n < 2:
        return list(range(n))
    rng = np.random.default_rng([seed, 3])
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm.tolist()
