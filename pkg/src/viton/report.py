"""Figures written next to the line-delimited CLI output."""

from __future__ import annotations

import shlex
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def parse_record(line):
    """Inverse of :func:`viton.pipeline.logfmt` for one line."""
    out = {}
    for token in shlex.split(line):
        key, _, value = token.partition("=")
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def read_log(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [parse_record(l) for l in lines if l.strip()]


def smooth(values, window=50):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def _hwc(img):
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] in (1, 3):
        img = img.transpose(1, 2, 0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    return np.clip(img, 0, 1)


def representation_preview(rep):
    """One RGB image summarizing p: pose in red, body in green, face/hair on top."""
    rep = np.asarray(rep)
    pose = rep[:18].max(axis=0)
    body = rep[18]
    face = rep[19:22].transpose(1, 2, 0)
    img = np.stack([pose, body * 0.6, np.zeros_like(body)], axis=-1)
    has_face = face.max(axis=-1, keepdims=True) > 0
    return np.where(has_face, face, img)


def sample_panel(result, sample, path, product=None):
    """Reference, product, p, I', M, c', alpha and the final image in one row."""
    product = sample.product if product is None else product
    tiles = [
        ("I", sample.person), ("c", product), ("p", representation_preview(result.representation)),
        ("I'", result.coarse_image), ("M", result.coarse_mask), ("c'", result.warped),
        ("alpha", result.alpha), ("final", result.final),
    ]
    fig, axes = plt.subplots(1, len(tiles), figsize=(1.6 * len(tiles), 2.0))
    for ax, (title, img) in zip(axes, tiles):
        img = _hwc(img)
        ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1,
                  interpolation="nearest")
        ax.set_title(title, fontsize=8)
        ax.axis("off")
    fig.suptitle(result.name + ("  (warp fallback)" if result.fell_back else ""), fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def loss_curves(logs, path, window=50):
    """``logs`` maps a stage name to its list of per-step records."""
    fig, axes = plt.subplots(1, len(logs), figsize=(4.5 * len(logs), 3.2), squeeze=False)
    for ax, (stage, records) in zip(axes[0], logs.items()):
        steps = [r["step"] for r in records]
        loss = [r["loss"] for r in records]
        ax.plot(steps, loss, lw=0.6, alpha=0.5, label="per step")
        s = smooth(loss, window)
        if len(s) != len(loss):
            ax.plot(steps[window - 1:], s, lw=1.5, label=f"{window}-step mean")
        ax.set_title(f"{stage} loss")
        ax.set_xlabel("step")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def metrics_chart(per_sample, path):
    """Clothing-region MAE before and after refinement, per sample."""
    names = [p["name"] for p in per_sample]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names) + 1.5), 3.2))
    ax.bar(x - 0.2, [p["coarse_mae_region"] for p in per_sample], 0.4, label="coarse I'")
    ax.bar(x + 0.2, [p["mae_region"] for p in per_sample], 0.4, label="refined")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_ylabel("clothing-region MAE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def warp_panel(product, mask, warped, path, title=""):
    fig, axes = plt.subplots(1, 3, figsize=(5.0, 2.0))
    for ax, (t, img) in zip(axes, (("product", product), ("target mask", mask), ("warped", warped))):
        img = _hwc(img)
        ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1,
                  interpolation="nearest")
        ax.set_title(t, fontsize=8)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
