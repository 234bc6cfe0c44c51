"""Clothing-agnostic person representation.

Three feature maps are built from precomputed pose keypoints and a
human-parse label map, then stacked channel-first:

* 18 binary pose channels, an 11×11 block of ones per keypoint
* 1 coarse body-shape channel (body minus face and hair, pooled to 16×12)
* 3 RGB channels holding only the face and hair pixels
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, bilinear_resize

NUM_KEYPOINTS = 18
HEATMAP_BLOCK = 11
BODY_GRID = (16, 12)
DEFAULT_SIZE = (256, 192)
NUM_CHANNELS = NUM_KEYPOINTS + 1 + 3

# parse label table
BACKGROUND, HAIR, FACE, UPPER_CLOTHES, ARMS, LEGS, OTHER_BODY = range(7)
LABEL_NAMES = {
    BACKGROUND: "background",
    HAIR: "hair",
    FACE: "face",
    UPPER_CLOTHES: "upper-clothes",
    ARMS: "arms",
    LEGS: "pants/legs",
    OTHER_BODY: "other-body",
}
BODY_LABELS = (UPPER_CLOTHES, ARMS, LEGS, OTHER_BODY)
FACE_HAIR_LABELS = (HAIR, FACE)


@dataclass(frozen=True)
class PoseKeypoints:
    """18 (x, y, confidence) triples in pixel coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise ValueError(f"expected {NUM_KEYPOINTS}×3 keypoints, got shape {pts.shape}")
        if np.any((pts[:, 2] < 0) | (pts[:, 2] > 1)):
            raise ValueError("keypoint confidence must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    def shifted(self, dx, dy):
        pts = self.points.copy()
        pts[:, 0] += dx
        pts[:, 1] += dy
        return PoseKeypoints(pts)


def validate_parse(parse):
    parse = np.asarray(parse)
    if parse.ndim != 2 or parse.size == 0:
        raise ValueError(f"parse map must be a nonempty 2-D grid, got shape {parse.shape}")
    bad = ~np.isin(parse, list(LABEL_NAMES))
    if bad.any():
        raise ValueError(f"parse map holds unknown label {int(parse[bad][0])}")
    return parse


def _round_half_up(v):
    return int(np.floor(v + 0.5))


def build_pose_heatmap(keypoints, size=DEFAULT_SIZE):
    m, n = size
    if m <= 0 or n <= 0:
        raise ValueError(f"heatmap size must be positive, got {size}")
    heat = np.zeros((NUM_KEYPOINTS, m, n), dtype=np.float32)
    half = HEATMAP_BLOCK // 2
    for i, (x, y, conf) in enumerate(keypoints.points):
        if conf == 0:
            continue
        cx, cy = _round_half_up(x), _round_half_up(y)
        r0, r1 = max(cy - half, 0), min(cy + half + 1, m)
        c0, c1 = max(cx - half, 0), min(cx + half + 1, n)
        if r0 < r1 and c0 < c1:
            heat[i, r0:r1, c0:c1] = 1.0
    return heat


def _block_edges(length, blocks):
    return (np.arange(blocks + 1) * length) // blocks


def coarsen_mask(mask, grid=BODY_GRID):
    """Majority-vote a binary mask onto ``grid`` cells, then paint it back.

    Returns ``(full_res, low_res)``.  Cells are the integer partition of the
    image into grid rows/cols; a cell is on when at least half its pixels are.
    """
    mask = np.asarray(mask, dtype=np.float32)
    m, n = mask.shape
    gh, gw = grid
    if m < gh or n < gw:
        raise ValueError(f"mask {m}×{n} smaller than the {gh}×{gw} grid")
    re, ce = _block_edges(m, gh), _block_edges(n, gw)
    row_sums = np.add.reduceat(mask, re[:-1], axis=0)
    sums = np.add.reduceat(row_sums, ce[:-1], axis=1)
    areas = np.outer(np.diff(re), np.diff(ce))
    low = (2 * sums >= areas).astype(np.float32)
    full = np.repeat(np.repeat(low, np.diff(re), axis=0), np.diff(ce), axis=1)
    return full, low


def build_body_mask(parse, size=DEFAULT_SIZE):
    parse = validate_parse(parse)
    body = np.isin(parse, BODY_LABELS).astype(np.float32)
    if body.shape != tuple(size):
        body = nearest_resize(body, size)
    full, _ = coarsen_mask(body)
    return full[None]


def extract_face_hair(parse, image):
    parse = validate_parse(parse)
    image = np.asarray(image, dtype=np.float32)
    if image.shape[:2] != parse.shape or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image shape {image.shape} does not match parse map {parse.shape}")
    keep = np.isin(parse, FACE_HAIR_LABELS)
    return (image * keep[..., None]).transpose(2, 0, 1).copy()


def clothing_mask(parse):
    """Pseudo ground-truth clothing mask: the upper-clothes label."""
    return (validate_parse(parse) == UPPER_CLOTHES).astype(np.float32)


def nearest_resize(a, size):
    m, n = size
    rows = np.minimum((np.arange(m) * a.shape[0]) // m, a.shape[0] - 1)
    cols = np.minimum((np.arange(n) * a.shape[1]) // n, a.shape[1] - 1)
    return a[rows][:, cols]


def assemble_representation(pose, body, face_hair):
    pose, body, face_hair = (np.asarray(a, dtype=np.float32) for a in (pose, body, face_hair))
    if pose.shape[0] != NUM_KEYPOINTS or body.shape[0] != 1 or face_hair.shape[0] != 3:
        raise ValueError(
            f"expected 18/1/3 channels, got {pose.shape[0]}/{body.shape[0]}/{face_hair.shape[0]}"
        )
    sizes = {pose.shape[1:], body.shape[1:], face_hair.shape[1:]}
    if len(sizes) != 1:
        raise ValueError(f"resolution mismatch between maps: {sorted(sizes)}")
    return np.concatenate([pose, body, face_hair], axis=0)


def decompose_representation(rep):
    rep = np.asarray(rep)
    if rep.shape[0] != NUM_CHANNELS:
        raise ValueError(f"expected {NUM_CHANNELS} channels, got {rep.shape[0]}")
    return rep[:NUM_KEYPOINTS], rep[NUM_KEYPOINTS : NUM_KEYPOINTS + 1], rep[NUM_KEYPOINTS + 1 :]


def build_representation(keypoints, parse, image, size=DEFAULT_SIZE):
    """Full 22×m×n representation from raw inputs at the parse resolution.

    Keypoints are rescaled along with the maps when ``size`` differs from the
    parse map's resolution.
    """
    parse = validate_parse(parse)
    h, w = parse.shape
    m, n = size
    if (h, w) != (m, n):
        pts = keypoints.points.copy()
        pts[:, 0] *= n / w
        pts[:, 1] *= m / h
        keypoints = PoseKeypoints(pts)
    pose = build_pose_heatmap(keypoints, size)
    body = build_body_mask(parse, size)
    face_hair = extract_face_hair(parse, image)
    if (h, w) != (m, n):
        face_hair = bilinear_resize(Tensor(face_hair[None]), size).data[0]
    return assemble_representation(pose, body, face_hair)
