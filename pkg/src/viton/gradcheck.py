"""Central finite-difference checks for analytic gradients.

The comparison metric is ``max|analytic - numeric| / max|numeric|`` per
input, i.e. the worst elementwise error relative to the gradient's own
scale.  All checks are meant to run in float64.

A difference step that moves any ReLU, leaky ReLU, abs or max-pool onto
another branch measures the average of two slopes, not the derivative at
the point.  Such steps are detected by recording the branch patterns at
both ends.  The element is then retried with the step shrunk tenfold, up
to ``REFINEMENTS`` times; elements that still straddle a kink are excluded,
and a check excluding more than ``MAX_SKIP_FRACTION`` of its elements fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import KinkRecorder, Tensor

STEP = 1e-4
TOLERANCE = 1e-5
MAX_SKIP_FRACTION = 0.05
REFINEMENTS = 3


def _evaluate(fn, inputs):
    with KinkRecorder() as rec:
        value = float(fn(*inputs).data)
    return value, rec.patterns


def _same_branches(p, q):
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))


def numerical_gradient(fn, inputs, index, step=STEP, elements=None, stats=None):
    """d fn / d inputs[index] by central differences, one element at a time.

    Elements that straddle a kink at every tried step come back as NaN.
    ``elements`` restricts the work to those flat indices (others are NaN
    too).  ``stats``, if given, counts elements that needed a smaller step
    under the key ``"refined"``.
    """
    x = inputs[index]
    grad = np.full(x.data.shape, np.nan)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    _, base = _evaluate(fn, inputs)
    for i in range(flat.size) if elements is None else elements:
        orig = flat[i]
        for attempt in range(REFINEMENTS + 1):
            h = step / 10**attempt
            flat[i] = orig + h
            hi, p_hi = _evaluate(fn, inputs)
            flat[i] = orig - h
            lo, p_lo = _evaluate(fn, inputs)
            flat[i] = orig
            if _same_branches(p_hi, base) and _same_branches(p_lo, base):
                out[i] = (hi - lo) / (2 * h)
                if attempt and stats is not None:
                    stats["refined"] = stats.get("refined", 0) + 1
                break
    return grad


def relative_error(analytic, numeric):
    """Worst absolute error over the finite entries of ``numeric``, scaled."""
    ok = np.isfinite(numeric)
    if not ok.any():
        return 0.0
    a, n = np.asarray(analytic)[ok], numeric[ok]
    diff = float(np.max(np.abs(a - n)))
    scale = float(np.max(np.abs(n)))
    return diff if scale == 0.0 else diff / scale


@dataclass
class GradCheckResult:
    name: str
    max_relative_error: float
    checked: int = 0
    skipped: int = 0
    refined: int = 0  # checked with a reduced step
    tolerance: float = TOLERANCE

    @property
    def skip_fraction(self):
        total = self.checked + self.skipped
        return self.skipped / total if total else 0.0

    @property
    def passed(self):
        return (self.max_relative_error < self.tolerance and self.checked > 0
                and self.skip_fraction <= MAX_SKIP_FRACTION)

    def merge(self, other):
        return GradCheckResult(self.name, max(self.max_relative_error, other.max_relative_error),
                               self.checked + other.checked, self.skipped + other.skipped,
                               self.refined + other.refined, self.tolerance)


def check_gradients(fn, inputs, wrt=None, step=STEP, sample=None, rng=None, name=""):
    """Compare backprop against central differences for ``fn(*inputs)``.

    ``fn`` maps the tensors in ``inputs`` to a scalar tensor.  Inputs whose
    index is in ``wrt`` (all of them by default) are compared.  With
    ``sample`` set, only that many randomly chosen elements per input are
    differenced.
    """
    wrt = range(len(inputs)) if wrt is None else wrt
    for t in inputs:
        t.grad = None
    for i in wrt:
        inputs[i].requires_grad = True
    loss = fn(*inputs)
    loss.backward()
    rng = rng or np.random.default_rng(0)
    worst, checked, skipped = 0.0, 0, 0
    stats = {}
    for i in wrt:
        size = inputs[i].data.size
        elements = None
        if sample is not None and sample < size:
            elements = np.sort(rng.choice(size, sample, replace=False))
        analytic = inputs[i].grad if inputs[i].grad is not None else np.zeros_like(inputs[i].data)
        numeric = numerical_gradient(fn, inputs, i, step, elements, stats)
        n_tried = size if elements is None else len(elements)
        n_ok = int(np.isfinite(numeric).sum())
        checked += n_ok
        skipped += n_tried - n_ok
        worst = max(worst, relative_error(analytic, numeric))
    return GradCheckResult(name, worst, checked, skipped, stats.get("refined", 0))


def random_tensor(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape).astype(np.float64))
