"""PNG and JSON readers/writers for images, parse maps, masks and keypoints.

Images are 8-bit RGB on disk and float32 in [0, 1] in memory; writes round
half up.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .representation import PoseKeypoints, validate_parse


def to_uint8(arr):
    return np.clip(np.floor(np.asarray(arr, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def read_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_image(path, arr):
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] == 3 and arr.shape[2] != 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")


def read_mask(path):
    with Image.open(path) as im:
        return (np.asarray(im.convert("L"), dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)


def write_mask(path, mask):
    """Write a [0, 1] single-channel map as 8-bit grayscale."""
    mask = np.asarray(mask)
    while mask.ndim > 2:
        mask = mask[0]
    Image.fromarray(to_uint8(mask), mode="L").save(path, format="PNG")


def read_parse(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise ValueError(f"{path}: parse map must be single-channel 8-bit, got mode {im.mode}")
        return validate_parse(np.asarray(im, dtype=np.uint8))


def write_parse(path, parse):
    Image.fromarray(validate_parse(parse).astype(np.uint8), mode="L").save(path, format="PNG")


def read_keypoints(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return PoseKeypoints(np.asarray(data, dtype=np.float64))


def write_keypoints(path, keypoints):
    rows = [[round(float(v), 4) for v in row] for row in keypoints.points]
    Path(path).write_text(json.dumps(rows) + "\n", encoding="utf-8")
