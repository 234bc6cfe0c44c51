"""Shape-context thin-plate-spline warping of a product image onto a mask.

The product's foreground outline and the predicted clothing-mask outline
are each sampled at K points, described by log-polar shape-context
histograms, matched by optimal assignment on the chi-squared histogram
cost, and the correspondence is interpolated by a thin-plate spline.

The spline is fitted from mask (output) space to product (source) space,
so applying it is a backward map: every output pixel looks up where to
sample the product image.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

log = logging.getLogger(__name__)

DEFAULT_POINTS = 96
DEFAULT_LAMBDA = 1.0
FOREGROUND_THRESHOLD = 0.92
MASK_THRESHOLD = 0.5
RADIAL_BINS = 5
ANGULAR_BINS = 12
RADIAL_RANGE = (0.125, 2.0)
POSITION_WEIGHT = 0.01


class WarpError(ValueError):
    """No usable shape to match: empty mask, too-short outline, singular fit."""


# ---- masks and outlines ---------------------------------------------------

def largest_component(mask):
    """Largest 4-connected component of a binary mask (lowest label on ties)."""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool))
    if count == 0:
        return np.zeros(labels.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def extract_foreground_mask(product, threshold=FOREGROUND_THRESHOLD):
    product = np.asarray(product)
    fg = product.min(axis=2) < threshold
    if not fg.any():
        raise WarpError("empty foreground: product image has no pixel darker than the threshold")
    return largest_component(fg)


@dataclass(frozen=True)
class ContourPoints:
    points: np.ndarray  # K×2 of (x, y)

    def __len__(self):
        return len(self.points)


def _outer_boundary(mask):
    padded = np.pad(mask.astype(np.float64), 1)
    contours = measure.find_contours(padded, 0.5)
    if not contours:
        raise WarpError("mask has no boundary")
    outline = max(contours, key=lambda c: _polyline_length(c))
    xy = outline[:, ::-1] - 1.0  # (row, col) -> (x, y), undo padding
    if np.allclose(xy[0], xy[-1]):
        xy = xy[:-1]
    return xy


def _polyline_length(pts):
    closed = np.vstack([pts, pts[:1]])
    return float(np.sum(np.hypot(*np.diff(closed, axis=0).T)))


def sample_contour_points(mask, k=DEFAULT_POINTS):
    """K points at equal arc-length spacing along the largest component's outline.

    Sampling starts from the outline vertex with the smallest (y, x), so the
    same mask always yields the same sequence.
    """
    if k < 4:
        raise ValueError(f"need at least 4 contour points, got {k}")
    mask = largest_component(mask)
    if not mask.any():
        raise WarpError("empty mask")
    xy = _outer_boundary(mask)
    start = np.lexsort((xy[:, 0], xy[:, 1]))[0]
    xy = np.roll(xy, -start, axis=0)
    closed = np.vstack([xy, xy[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < k:
        raise WarpError(f"outline length {total:.1f} px is shorter than {k} points")
    targets = np.arange(k) * (total / k)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    h, w = mask.shape
    pts = np.column_stack([np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)])
    return ContourPoints(pts)


# ---- shape context --------------------------------------------------------

def _radial_edges():
    lo, hi = RADIAL_RANGE
    return np.geomspace(lo, hi, RADIAL_BINS)[1:]


def shape_context_all(points):
    """RADIAL_BINS×ANGULAR_BINS count histograms for every point, shape K×R×A.

    Distances are normalized by the mean pairwise distance; the innermost
    radial bin also takes anything closer than the range start and the
    outermost is unbounded, so each histogram counts all K-1 other points.
    """
    pts = np.asarray(points.points if isinstance(points, ContourPoints) else points, dtype=np.float64)
    k = len(pts)
    d = pts[None, :, :] - pts[:, None, :]
    r = np.hypot(d[..., 0], d[..., 1])
    off = ~np.eye(k, dtype=bool)
    mean_r = r[off].mean()
    if mean_r == 0:
        raise WarpError("all contour points coincide")
    rn = r / mean_r
    rbin = np.searchsorted(_radial_edges(), rn, side="right")
    theta = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)
    abin = np.minimum((theta / (2 * np.pi / ANGULAR_BINS)).astype(int), ANGULAR_BINS - 1)
    hist = np.zeros((k, RADIAL_BINS * ANGULAR_BINS), dtype=np.int64)
    rows = np.broadcast_to(np.arange(k)[:, None], (k, k))[off]
    flat = (rbin * ANGULAR_BINS + abin)[off]
    np.add.at(hist, (rows, flat), 1)
    return hist.reshape(k, RADIAL_BINS, ANGULAR_BINS)


def shape_context(points, index):
    pts = points.points if isinstance(points, ContourPoints) else np.asarray(points)
    if not 0 <= index < len(pts):
        raise IndexError(f"point index {index} out of range for {len(pts)} points")
    return shape_context_all(points)[index]


def matching_cost_matrix(src, dst):
    """Chi-squared cost between every pair of normalized histograms."""
    a = np.asarray(src, dtype=np.float64).reshape(len(src), -1)
    b = np.asarray(dst, dtype=np.float64).reshape(len(dst), -1)
    if len(a) != len(b):
        raise ValueError(f"descriptor counts differ: {len(a)} vs {len(b)}")
    a = a / np.maximum(a.sum(axis=1, keepdims=True), 1e-300)
    b = b / np.maximum(b.sum(axis=1, keepdims=True), 1e-300)
    num = (a[:, None, :] - b[None, :, :]) ** 2
    den = a[:, None, :] + b[None, :, :]
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return 0.5 * ratio.sum(axis=2)


# ---- optimal assignment ---------------------------------------------------

def hungarian_assign(cost):
    """Minimum-cost perfect matching of a square matrix (Kuhn-Munkres).

    Shortest augmenting paths with row/column potentials, O(K³).  Returns
    ``perm`` with row ``i`` assigned to column ``perm[i]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    # 1-based arrays; index 0 is the virtual source column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)  # column -> assigned row
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[row_of[1:] - 1] = np.arange(n)
    return perm


def assignment_cost(cost, perm):
    cost = np.asarray(cost)
    return float(sum(cost[i, perm[i]] for i in range(len(perm))))


# ---- thin-plate spline ----------------------------------------------------

def tps_kernel(r2):
    """U(r) = r² log r² written on squared distances, with U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = r2[pos] * np.log(r2[pos])
    return out


@dataclass
class TpsTransform:
    """Map from output coordinates to source coordinates.

    ``affine`` is 2×3 in pixel units, rows (x', y') = [c, a_x, a_y]·[1, x, y].
    ``warp_weights`` are K×2 in pixel units; the kernel is evaluated on
    distances divided by ``scale``.
    """

    control_points: np.ndarray
    affine: np.ndarray
    warp_weights: np.ndarray
    regularization: float = 0.0
    scale: float = 1.0

    @classmethod
    def identity(cls, control_points=None):
        cp = np.zeros((0, 2)) if control_points is None else np.asarray(control_points, float)
        affine = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return cls(cp, affine, np.zeros((len(cp), 2)))

    def __call__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = self.affine[:, 0] + pts @ self.affine[:, 1:].T
        if len(self.control_points):
            d = (pts[:, None, :] - self.control_points[None, :, :]) / self.scale
            out = out + tps_kernel((d**2).sum(axis=2)) @ self.warp_weights
        return out


def fit_tps(src, dst, correspondence=None, lam=DEFAULT_LAMBDA, scale=None):
    """Fit a TPS sending control points ``src`` to ``dst[correspondence]``.

    Points are divided by ``scale`` (default: the larger extent of both point
    sets, so they land in [0, 1]²) before solving, which makes ``lam``
    resolution-independent.
    """
    if lam < 0:
        raise ValueError(f"regularization must be nonnegative, got {lam}")
    p = np.asarray(src.points if isinstance(src, ContourPoints) else src, dtype=np.float64)
    q = np.asarray(dst.points if isinstance(dst, ContourPoints) else dst, dtype=np.float64)
    if correspondence is not None:
        q = q[np.asarray(correspondence)]
    k = len(p)
    if k < 4 or len(q) != k:
        raise ValueError(f"need matching point sets of at least 4, got {k} and {len(q)}")
    if scale is None:
        scale = float(max(np.max(p), np.max(q), 1.0))
    ps, qs = p / scale, q / scale
    r2 = ((ps[:, None, :] - ps[None, :, :]) ** 2).sum(axis=2)
    big_p = np.column_stack([np.ones(k), ps])
    system = np.zeros((k + 3, k + 3))
    system[:k, :k] = tps_kernel(r2) + lam * np.eye(k)
    system[:k, k:] = big_p
    system[k:, :k] = big_p.T
    rhs = np.zeros((k + 3, 2))
    rhs[:k] = qs
    # rank check catches collinear or duplicated control points
    if np.linalg.matrix_rank(system) < k + 3:
        raise WarpError("singular TPS system: control points are collinear or duplicated")
    sol = np.linalg.solve(system, rhs)
    w, a = sol[:k], sol[k:]
    affine = np.array([[a[0, 0] * scale, a[1, 0], a[2, 0]], [a[0, 1] * scale, a[1, 1], a[2, 1]]])
    return TpsTransform(p, affine, w * scale, float(lam), scale)


def apply_tps_warp(product, transform, out_size, mask=None):
    """Backward-warp ``product`` (H×W×3) to ``out_size``.

    Returns ``(warped_image, warped_mask)``; samples falling outside the
    source are 0.  The mask (the product foreground when not given) is
    sampled nearest-neighbor.
    """
    product = np.asarray(product, dtype=np.float32)
    h, w = product.shape[:2]
    m, n = out_size
    yy, xx = np.mgrid[0:m, 0:n]
    src = transform(np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64))
    sx, sy = src[:, 0], src[:, 1]
    warped = bilinear_sample(product, sx, sy).reshape(m, n, -1)
    if mask is None:
        mask = extract_foreground_mask(product)
    mx = np.floor(sx + 0.5).astype(np.int64)
    my = np.floor(sy + 0.5).astype(np.int64)
    inside = (mx >= 0) & (mx < w) & (my >= 0) & (my < h)
    wm = np.zeros(m * n, dtype=np.float32)
    wm[inside] = np.asarray(mask, dtype=np.float32)[my[inside], mx[inside]]
    return warped, wm.reshape(m, n)


def bilinear_sample(image, x, y):
    """Sample H×W×C ``image`` at float pixel coordinates, zero outside."""
    h, w = image.shape[:2]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0).astype(np.float32)[:, None]
    fy = (y - y0).astype(np.float32)[:, None]

    def tap(yi, xi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros((len(xi), image.shape[2]), dtype=image.dtype)
        vals[ok] = image[yi[ok], xi[ok]]
        return vals

    return (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )


# ---- composed warp --------------------------------------------------------

def _normalized_positions(points):
    pts = np.asarray(points.points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    spread = np.sqrt((centered**2).sum(axis=1).mean())
    return centered / max(spread, 1e-12)


def correspond(mask_points, product_points, position_weight=POSITION_WEIGHT):
    """Assignment of mask contour points to product contour points.

    The chi-squared shape-context cost gets a small centroid- and
    scale-normalized position term, which keeps matches unique along
    straight edges where neighbouring histograms coincide.
    """
    cost = matching_cost_matrix(shape_context_all(mask_points), shape_context_all(product_points))
    if position_weight:
        a, b = _normalized_positions(mask_points), _normalized_positions(product_points)
        cost = cost + position_weight * np.hypot(*(a[:, None, :] - b[None, :, :]).transpose(2, 0, 1))
    return hungarian_assign(cost)


@dataclass
class WarpResult:
    image: np.ndarray  # m×n×3
    mask: np.ndarray  # m×n
    transform: TpsTransform
    mask_points: ContourPoints
    product_points: ContourPoints
    correspondence: np.ndarray


def warp_clothing(product, predicted_mask, k=DEFAULT_POINTS, lam=DEFAULT_LAMBDA, out_size=None):
    """Warp ``product`` (H×W×3) onto the predicted clothing mask (m×n)."""
    predicted_mask = np.asarray(predicted_mask)
    while predicted_mask.ndim > 2:
        predicted_mask = predicted_mask[0]
    out_size = predicted_mask.shape if out_size is None else tuple(out_size)
    target = predicted_mask >= MASK_THRESHOLD
    if not target.any():
        raise WarpError("predicted clothing mask is empty after thresholding")
    fg = extract_foreground_mask(product)
    mask_pts = sample_contour_points(target, k)
    prod_pts = sample_contour_points(fg, k)
    perm = correspond(mask_pts, prod_pts)
    scale = float(max(max(out_size), max(fg.shape)))
    tps = fit_tps(mask_pts, prod_pts, perm, lam, scale=scale)
    image, wmask = apply_tps_warp(product, tps, out_size, mask=fg)
    return WarpResult(image, wmask, tps, mask_pts, prod_pts, perm)
