"""Synthetic paired try-on samples and their on-disk layout.

Each sample directory holds::

    person.png      reference image I (person wearing the garment)
    product.png     flat product image c of the same garment on white
    keypoints.json  18 [x, y, confidence] triples
    parse.png       8-bit label map (see representation.LABEL_NAMES)

The person is drawn from primitives: elliptical head with a hair cap,
a trapezoid torso wearing the garment, limb bars posed from the sampled
keypoints.  The garment pattern is a function of garment coordinates
(u, v) in [0, 1]², so the torso and the product render the same texture
through different shapes.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import files
from .representation import (
    ARMS, BACKGROUND, FACE, HAIR, LEGS, OTHER_BODY, UPPER_CLOTHES,
    PoseKeypoints, clothing_mask,
)

PATTERNS = ("solid", "stripes", "checker")


@dataclass
class TryOnSample:
    person: np.ndarray  # m×n×3 in [0, 1]
    product: np.ndarray  # H×W×3 in [0, 1]
    keypoints: PoseKeypoints
    parse: np.ndarray  # m×n label codes
    name: str = ""

    def __post_init__(self):
        if self.person.shape[:2] != self.parse.shape:
            raise ValueError(
                f"person image {self.person.shape[:2]} and parse map {self.parse.shape} differ"
            )

    @property
    def target_mask(self):
        return clothing_mask(self.parse)


def load_sample(directory):
    d = Path(directory)
    return TryOnSample(
        person=files.read_image(d / "person.png"),
        product=files.read_image(d / "product.png"),
        keypoints=files.read_keypoints(d / "keypoints.json"),
        parse=files.read_parse(d / "parse.png"),
        name=d.name,
    )


def list_samples(root):
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "person.png").exists())
    if not dirs:
        raise FileNotFoundError(f"no samples under {root}")
    return dirs


def save_sample(directory, sample):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files.write_image(d / "person.png", sample.person)
    files.write_image(d / "product.png", sample.product)
    files.write_keypoints(d / "keypoints.json", sample.keypoints)
    files.write_parse(d / "parse.png", sample.parse)


# ---- garment textures -----------------------------------------------------

def _random_color(rng, light=(0.35, 0.75)):
    h = rng.random()
    s = rng.uniform(0.5, 0.9)
    v = rng.uniform(*light)
    return np.array(colorsys.hsv_to_rgb(h, s, v), dtype=np.float32)


@dataclass
class Garment:
    kind: str
    colors: tuple
    frequency: int
    vertical: bool

    def texture(self, u, v):
        a, b = self.colors
        if self.kind == "solid":
            sel = np.zeros_like(u, dtype=bool)
        elif self.kind == "stripes":
            t = u if self.vertical else v
            sel = (np.floor(t * self.frequency * 2) % 2).astype(bool)
        else:
            sel = ((np.floor(u * self.frequency) + np.floor(v * self.frequency)) % 2).astype(bool)
        return np.where(sel[..., None], b, a)


def random_garment(rng):
    kind = PATTERNS[int(rng.integers(len(PATTERNS)))]
    a = _random_color(rng)
    b = _random_color(rng, light=(0.15, 0.45))
    return Garment(kind, (a, b), int(rng.integers(2, 5)), bool(rng.integers(2)))


# ---- drawing helpers ------------------------------------------------------

def _grid(m, n):
    yy, xx = np.mgrid[0:m, 0:n].astype(np.float64)
    return xx + 0.5, yy + 0.5


def _segment_mask(xx, yy, p, q, radius):
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / max(d @ d, 1e-9), 0, 1)
    return (xx - p[0] - t * d[0]) ** 2 + (yy - p[1] - t * d[1]) ** 2 <= radius**2


def _ellipse_mask(xx, yy, center, rx, ry):
    return ((xx - center[0]) / rx) ** 2 + ((yy - center[1]) / ry) ** 2 <= 1.0


def render_product(garment, size):
    """Flat garment on pure white; the garment fills a centered rectangle."""
    m, n = size
    xx, yy = _grid(m, n)
    x0, x1 = 0.25 * n, 0.75 * n
    y0, y1 = 0.18 * m, 0.82 * m
    u = (xx - x0) / (x1 - x0)
    v = (yy - y0) / (y1 - y0)
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    img = np.ones((m, n, 3), dtype=np.float32)
    img[inside] = garment.texture(u, v)[inside]
    return img


def render_person(rng, garment, size):
    m, n = size
    xx, yy = _grid(m, n)
    cx = n * (0.5 + rng.uniform(-0.06, 0.06))
    neck_y = m * rng.uniform(0.24, 0.29)
    hip_y = m * rng.uniform(0.62, 0.70)
    half_sh = n * rng.uniform(0.15, 0.21)
    half_hip = n * rng.uniform(0.12, 0.17)
    head_r = m * rng.uniform(0.08, 0.10)
    limb = max(1.5, n * 0.045)

    skin = np.array(colorsys.hsv_to_rgb(rng.uniform(0.03, 0.09), rng.uniform(0.3, 0.6),
                                        rng.uniform(0.55, 0.95)), dtype=np.float32)
    hair_c = np.array(colorsys.hsv_to_rgb(rng.uniform(0.0, 0.12), rng.uniform(0.3, 0.8),
                                          rng.uniform(0.08, 0.4)), dtype=np.float32)
    pants = _random_color(rng, light=(0.15, 0.4))
    bg = np.float32(rng.uniform(0.88, 0.97))

    img = np.full((m, n, 3), bg, dtype=np.float32)
    parse = np.full((m, n), BACKGROUND, dtype=np.uint8)

    def paint(mask, color, label):
        img[mask] = color if np.ndim(color) == 1 else color[mask]
        parse[mask] = label

    sh_y = neck_y + m * 0.02
    r_sh, l_sh = (cx - half_sh, sh_y), (cx + half_sh, sh_y)
    r_hip, l_hip = (cx - half_hip * 0.8, hip_y), (cx + half_hip * 0.8, hip_y)

    def limb_chain(start, angle0, angle1, length):
        a0, a1 = np.deg2rad(angle0), np.deg2rad(angle1)
        mid = (start[0] + length * np.sin(a0), start[1] + length * np.cos(a0))
        end = (mid[0] + length * np.sin(a1), mid[1] + length * np.cos(a1))
        return mid, end

    arm_len = m * rng.uniform(0.17, 0.21)
    leg_len = m * 0.17
    r_elbow, r_wrist = limb_chain(r_sh, -rng.uniform(15, 40), -rng.uniform(0, 50), arm_len)
    l_elbow, l_wrist = limb_chain(l_sh, rng.uniform(15, 40), rng.uniform(0, 50), arm_len)
    r_knee, r_ankle = limb_chain(r_hip, -rng.uniform(0, 10), rng.uniform(-5, 5), leg_len)
    l_knee, l_ankle = limb_chain(l_hip, rng.uniform(0, 10), rng.uniform(-5, 5), leg_len)

    # legs first, torso on top, then arms
    for a, b in ((r_hip, r_knee), (r_knee, r_ankle), (l_hip, l_knee), (l_knee, l_ankle)):
        paint(_segment_mask(xx, yy, a, b, limb * 1.3), pants, LEGS)
    paint(_segment_mask(xx, yy, (cx, neck_y - m * 0.03), (cx, neck_y + m * 0.02), limb), skin,
          OTHER_BODY)

    v = (yy - sh_y) / (hip_y - sh_y)
    half = half_sh + (half_hip - half_sh) * v
    u = (xx - (cx - half)) / (2 * half)
    torso = (v >= 0) & (v < 1) & (u >= 0) & (u < 1)
    paint(torso, garment.texture(u, v), UPPER_CLOTHES)

    for a, b in ((r_sh, r_elbow), (r_elbow, r_wrist), (l_sh, l_elbow), (l_elbow, l_wrist)):
        seg = _segment_mask(xx, yy, a, b, limb) & ~torso
        paint(seg, skin, ARMS)

    head_c = (cx + rng.uniform(-1, 1) * n * 0.01, neck_y - head_r * 1.05)
    paint(_ellipse_mask(xx, yy, (head_c[0], head_c[1] - head_r * 0.25), head_r * 1.1, head_r * 0.95),
          hair_c, HAIR)
    face = _ellipse_mask(xx, yy, (head_c[0], head_c[1] + head_r * 0.15), head_r * 0.85, head_r * 0.85)
    paint(face, skin, FACE)

    eye_dx, eye_y = head_r * 0.35, head_c[1]
    pts = [
        (head_c[0], head_c[1] + head_r * 0.3),  # nose
        (cx, neck_y),
        r_sh, r_elbow, r_wrist,
        l_sh, l_elbow, l_wrist,
        r_hip, r_knee, r_ankle,
        l_hip, l_knee, l_ankle,
        (head_c[0] - eye_dx, eye_y), (head_c[0] + eye_dx, eye_y),
        (head_c[0] - head_r * 0.85, eye_y), (head_c[0] + head_r * 0.85, eye_y),
    ]
    conf = np.ones(18)
    conf[16:] = (rng.random(2) > 0.2).astype(float)  # ears are sometimes missed
    kp = PoseKeypoints(np.column_stack([np.asarray(pts), conf]))
    return img, parse, kp


def make_sample(seed, index, size):
    rng = np.random.default_rng([seed, index])
    garment = random_garment(rng)
    person, parse, kp = render_person(rng, garment, size)
    product = render_product(garment, size)
    return TryOnSample(person, product, kp, parse, name=f"sample_{index:04d}")


def generate_fixtures(count, seed, out_dir, size=(64, 64), start=0):
    """Render ``count`` samples to ``out_dir``; deterministic per seed."""
    if count < 1:
        raise ValueError("fixture count must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(start, start + count):
        sample = make_sample(seed, i, size)
        path = out / sample.name
        save_sample(path, sample)
        paths.append(path)
    return paths
