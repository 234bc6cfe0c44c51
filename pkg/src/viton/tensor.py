"""Dense tensors with reverse-mode differentiation.

Every operation here takes and returns :class:`Tensor` objects backed by
numpy arrays.  Each result records its parents and a closure that pushes
the upstream gradient back to them; :meth:`Tensor.backward` walks that
record in reverse topological order.

There is deliberately no general broadcasting: binary ops accept either
two tensors of identical shape or a tensor and a Python scalar.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


# Piecewise-linear ops append their branch selection here while a
# KinkRecorder is active, so finite-difference checks can tell when a step
# crossed from one linear piece to another.
_kink_log = None


class KinkRecorder:
    def __enter__(self):
        global _kink_log
        self._outer, _kink_log = _kink_log, []
        self.patterns = _kink_log
        return self

    def __exit__(self, *exc):
        global _kink_log
        _kink_log = self._outer
        return False


def _note_branch(pattern):
    if _kink_log is not None:
        _kink_log.append(pattern)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # ---- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # ---- graph plumbing ---------------------------------------------------
    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Populate ``grad`` on every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node._accumulate(g)
                continue
            if node.requires_grad and node.name is not None:
                # named intermediates keep their gradient for inspection
                node._accumulate(g)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # ---- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---- elementwise arithmetic -----------------------------------------------

def add(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data + b, (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data - b, (a,), lambda g: (g,))
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data * b, (a,), lambda g: (g * b,))
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def abs_(a):
    # sign(0) = 0 is the subgradient choice at ties
    _note_branch(np.sign(a.data))
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sum_all(a):
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),))


def mean_all(a):
    n = a.data.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),))


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=1):
    """Stack tensors along ``axis`` in argument order."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def concat_channels(tensors):
    return concat(tensors, axis=1)


def expand_channels(a, channels):
    """Repeat a single-channel N×1×H×W tensor across ``channels`` channels."""
    if a.ndim != 4 or a.shape[1] != 1:
        raise ShapeError(f"expand_channels needs N×1×H×W, got {a.shape}")
    return _result(
        np.repeat(a.data, channels, axis=1), (a,), lambda g: (g.sum(axis=1, keepdims=True),)
    )


# ---- activations ----------------------------------------------------------

def relu(a):
    mask = a.data > 0
    _note_branch(mask)
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    _note_branch(scale > slope)
    return _result(a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a):
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def activation(a, kind, slope=0.2):
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}.get(kind)
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(a)


# ---- convolution ----------------------------------------------------------

def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size, kernel, stride, padding):
    return (size - 1) * stride - 2 * padding + kernel


def _windows(x, k, stride, padding, out_hw):
    """View of shape N×C×Ho×Wo×kh×kw over the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, k, axis=(2, 3))
    return win[:, :, : stride * out_hw[0] : stride, : stride * out_hw[1] : stride]


def _scatter_windows(cols, padded_hw, stride, padding):
    """Adjoint of :func:`_windows`: sum N×Ho×Wo×C×kh×kw patches into an image."""
    n, ho, wo, c, kh, kw = cols.shape
    img = np.zeros((n, c) + tuple(padded_hw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            img[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        img = img[:, :, padding:-padding, padding:-padding]
    return img


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of N×C×H×W input with O×C×kh×kw weights."""
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv2d: expected {wc} input channels, got {c}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: {kh}×{kw} kernel larger than padded input {h}×{w}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    win = _windows(x.data, (kh, kw), stride, padding, (ho, wo))
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        grads = []
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))  # N×Ho×Wo×C×kh×kw
            gx = _scatter_windows(cols, (h + 2 * padding, w + 2 * padding), stride, padding)
            grads.append(gx)
        else:
            grads.append(None)
        grads.append(
            np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        )
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result(out, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=2, padding=1):
    """Transposed convolution with C×O×kh×kw weights.

    Sharing the same weight array with :func:`conv2d` makes this its exact
    adjoint (bias excluded).
    """
    n, c, h, w = x.shape
    wc, o, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv_transpose2d: expected {wc} input channels, got {c}")
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    if hp <= 2 * padding or wp <= 2 * padding:
        raise ShapeError("conv_transpose2d: padding crops the whole output")
    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))  # N×H×W×O×kh×kw
    out = _scatter_windows(cols, (hp, wp), stride, padding)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        win = _windows(g, (kh, kw), stride, padding, (h, w))  # N×O×H×W×kh×kw
        grads = [
            np.ascontiguousarray(
                np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            )
            if x.requires_grad
            else None,
            np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result(out, parents, backward)


def max_pool2d(x, size=2):
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: {h}×{w} not divisible by {size}")
    blocks = (
        x.data.reshape(n, c, h // size, size, w // size, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // size, w // size, size * size)
    )
    arg = blocks.argmax(axis=-1)
    _note_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = (
            gb.reshape(n, c, h // size, w // size, size, size)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (gx,)

    return _result(out, (x,), backward)


# ---- normalization and regularization -------------------------------------

def batch_norm2d(
    x, gamma, beta, training, running_mean=None, running_var=None, momentum=0.1, eps=1e-5
):
    """Per-channel normalization over N, H, W.

    In training mode batch statistics are used and the running buffers (if
    given) are updated in place; in eval mode the running buffers are used.
    """
    n, c, h, w = x.shape
    if training:
        count = n * h * w
        if count < 2:
            raise ShapeError("batch_norm2d: training mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = xhat * gamma.data.reshape(1, -1, 1, 1) + beta.data.reshape(1, -1, 1, 1)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(1, -1, 1, 1)
        if training:
            m = n * h * w
            gx = (inv_std.reshape(1, -1, 1, 1) / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv_std.reshape(1, -1, 1, 1)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def dropout(x, p, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---- resampling -----------------------------------------------------------

def _align_corners_matrix(src, dst, dtype):
    m = np.zeros((dst, src), dtype=dtype)
    if dst == 1 or src == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    m[np.arange(dst), lo] = 1.0 - frac
    m[np.arange(dst), lo + 1] += frac
    return m


def bilinear_resize(x, size):
    """Bilinear resize of an N×C×H×W tensor with corner pixels aligned."""
    hh, ww = size
    if hh < 1 or ww < 1:
        raise ValueError(f"target size must be positive, got {size}")
    n, c, h, w = x.shape
    if (hh, ww) == (h, w):
        return x
    ry = _align_corners_matrix(h, hh, x.dtype)
    rx = _align_corners_matrix(w, ww, x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", ry, x.data, rx, optimize=True)
    return _result(
        out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", ry, g, rx, optimize=True),)
    )
