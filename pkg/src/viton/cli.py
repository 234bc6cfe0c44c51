"""Command-line entry point: ``viton <subcommand> [options]``.

Every subcommand prints line-delimited ``key=value`` records on stdout.
Commands that produce figures write them as PNG files into ``--out`` and
print one ``figure=...`` record per file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import files, pipeline as P, report
from .config import ConfigError, configure_logging, load_config, parse_assignments
from .data import generate_fixtures
from .warp import warp_clothing

log = logging.getLogger("viton.cli")


def emit(**fields):
    print(P.logfmt(**fields), flush=True)


def _config(args):
    overrides = parse_assignments(args.set)
    for key in ("data_dir", "work_dir", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _out_dir(args, config, name):
    out = Path(args.out) if args.out else Path(config.work_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- subcommands ----------------------------------------------------------

def cmd_gen_fixtures(args):
    seed = args.seed if args.seed is not None else 0
    size = tuple(int(v) for v in args.size.lower().split("x"))
    paths = generate_fixtures(args.count, seed, args.out, size=size, start=args.start)
    for p in paths:
        emit(sample=p.name, path=str(p))
    emit(event="fixtures", count=len(paths), seed=seed, out=args.out)


def cmd_prepare(args):
    config = _config(args)
    samples = P.prepare(config)
    for s in samples:
        emit(sample=s.name, body_fraction=float(s.representation[18].mean()),
             clothing_fraction=float(s.target_mask.mean()))
    emit(event="prepared", count=len(samples), work_dir=config.work_dir)


def cmd_train_coarse(args):
    config = _config(args)
    samples = P.load_prepared(config.work_dir)
    gen, losses = P.train_coarse(config, samples)
    for i, loss in enumerate(losses, 1):
        emit(stage="coarse", step=i, loss=loss)
    out = _out_dir(args, config, "report")
    fig = report.loss_curves({"coarse": report.read_log(Path(config.work_dir) / "logs" / "coarse.log")},
                             out / "coarse_loss.png")
    emit(figure=str(fig))
    emit(event="trained", stage="coarse", steps=len(losses),
         checkpoint=str(Path(config.work_dir) / "coarse.ckpt"))


def cmd_train_refine(args):
    config = _config(args)
    samples = P.load_prepared(config.work_dir)
    gen = P.load_generator(config, Path(config.work_dir) / "coarse.ckpt")
    warps = P.precompute_warps(config, gen, samples)
    for w in warps:
        emit(sample=w.name, warp="ok" if w.warped is not None else "failed", error=w.error)
    net, losses = P.train_refine(config, samples, warps)
    for i, loss in enumerate(losses, 1):
        emit(stage="refine", step=i, loss=loss)
    out = _out_dir(args, config, "report")
    fig = report.loss_curves({"refine": report.read_log(Path(config.work_dir) / "logs" / "refine.log")},
                             out / "refine_loss.png")
    emit(figure=str(fig))
    emit(event="trained", stage="refine", steps=len(losses),
         checkpoint=str(Path(config.work_dir) / "refine.ckpt"))


def _models(config):
    work = Path(config.work_dir)
    return (P.load_generator(config, work / "coarse.ckpt"),
            P.load_refiner(config, work / "refine.ckpt"))


def _write_result(out, result):
    d = out / result.name
    d.mkdir(parents=True, exist_ok=True)
    files.write_image(d / "final.png", result.final)
    files.write_image(d / "coarse.png", result.coarse_image)
    files.write_mask(d / "mask.png", result.coarse_mask)
    files.write_image(d / "warped.png", result.warped)
    files.write_mask(d / "alpha.png", result.alpha)
    np.save(d / "representation.npy", result.representation)
    return d


def cmd_infer(args):
    config = _config(args)
    gen, net = _models(config)
    out = _out_dir(args, config, "infer")
    if args.sample:
        from .data import load_sample
        samples = [P.prepare_sample(load_sample(args.sample), config.size)]
    else:
        samples = P.load_prepared(config.work_dir)
    if args.product:
        products = [files.read_image(args.product)] * len(samples)
    else:
        pairs = P.pair_products(samples, config.pairing, config.seed)
        products = [samples[j].product for j in pairs]
    for s, product in zip(samples, products):
        r = P.run_inference(config, s, product, gen, net)
        d = _write_result(out, r)
        fig = report.sample_panel(r, s, d / "panel.png", product=product)
        emit(sample=r.name, out=str(d), fallback=int(r.fell_back),
             mean_alpha=float(r.alpha.mean()))
        emit(figure=str(fig))


def cmd_warp(args):
    config = _config(args)
    product = files.read_image(args.product)
    mask = files.read_mask(args.mask)
    k = args.points or config.contour_points
    lam = config.tps_lambda if args.lam is None else args.lam
    res = warp_clothing(product, mask, k=k, lam=lam, out_size=mask.shape)
    files.write_image(args.output, res.image)
    disp = float(np.abs(res.transform(res.transform.control_points)
                        - res.transform.control_points).max())
    emit(warped=args.output, points=k, lam=lam, max_control_displacement=disp,
         warped_area=int(res.mask.sum()), target_area=int((mask >= 0.5).sum()))
    fig_path = Path(args.output).with_name(Path(args.output).stem + "_panel.png")
    emit(figure=str(report.warp_panel(product, mask, res.image, fig_path)))


def cmd_eval(args):
    config = _config(args)
    gen, net = _models(config)
    samples = P.load_prepared(config.work_dir)
    pairs = P.pair_products(samples, config.pairing, config.seed)
    results = [(P.run_inference(config, s, samples[j].product, gen, net), s)
               for s, j in zip(samples, pairs)]
    summary, per = P.evaluate(results)
    out = _out_dir(args, config, "report")
    for rec in per:
        emit(**rec)
    for r, s in results[: args.panels]:
        emit(figure=str(report.sample_panel(r, s, out / f"panel_{r.name}.png")))
    emit(figure=str(report.metrics_chart(per, out / "metrics.png")))
    logs = {stage: report.read_log(Path(config.work_dir) / "logs" / f"{stage}.log")
            for stage in ("coarse", "refine")
            if (Path(config.work_dir) / "logs" / f"{stage}.log").exists()}
    if logs:
        emit(figure=str(report.loss_curves(logs, out / "loss_curves.png")))
    emit(event="summary", pairing=config.pairing, **summary)


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    results, seconds = run_suite(range(args.seeds), args.case or None)
    for r in results:
        emit(case=r.name, max_relative_error=r.max_relative_error, checked=r.checked,
             refined=r.refined, skipped=r.skipped, passed=int(r.passed))
    ok = all(r.passed for r in results)
    emit(event="gradcheck", seeds=args.seeds, seconds=round(seconds, 2), passed=int(ok))
    return 0 if ok else 1


# ---- argument parsing -----------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="viton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="key = value config file (UTF-8)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        p.add_argument("--data", dest="data_dir", help="fixture directory")
        p.add_argument("--work", dest="work_dir", help="work directory")
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", help="directory for images and figures")
        return p

    p = sub.add_parser("gen-fixtures", help="render synthetic paired samples")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int)
    p.add_argument("--start", type=int, default=0, help="index of the first sample")
    p.add_argument("--size", default="64x64", help="MxN pixels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fixtures)

    common(sub.add_parser("prepare", help="build and cache p and M0"), out=False).set_defaults(
        func=cmd_prepare)
    common(sub.add_parser("train-coarse", help="stage 1: encoder-decoder")).set_defaults(
        func=cmd_train_coarse)
    common(sub.add_parser("train-refine", help="stage 2: refinement network")).set_defaults(
        func=cmd_train_refine)

    p = common(sub.add_parser("infer", help="run the full pipeline"))
    p.add_argument("--sample", help="a single fixture directory instead of the prepared set")
    p.add_argument("--product", help="product image to try on (default: per pairing)")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("warp", help="warp a product image onto a mask"), out=False)
    p.add_argument("--product", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--output", required=True, help="warped PNG path")
    p.add_argument("--points", type=int, help="contour points K")
    p.add_argument("--lam", type=float, help="TPS regularization")
    p.set_defaults(func=cmd_warp)

    p = common(sub.add_parser("eval", help="metrics over the prepared set"))
    p.add_argument("--panels", type=int, default=4, help="number of per-sample figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--case", action="append", help="limit to named cases")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    configure_logging(sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (ConfigError, FileNotFoundError, P.TrainingAborted) as e:
        log.error("%s", e)
        emit(event="error", message=str(e))
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
