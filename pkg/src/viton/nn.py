"""Parameter containers for the networks built on :mod:`viton.tensor`."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container: named parameters, named buffers, train/eval flag."""

    def __init__(self):
        self.training = True

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def _own(self, kind):
        for name, value in vars(self).items():
            if kind == "param" and isinstance(value, Tensor):
                yield name, value
            elif kind == "buffer" and isinstance(value, np.ndarray):
                yield name, value

    def named_parameters(self, prefix=""):
        for name, p in self._own("param"):
            yield prefix + name, p
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._own("buffer"):
            yield prefix + name, b
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        """Parameters then buffers, as name -> array (views, not copies)."""
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        unknown = sorted(set(state) - set(own))
        if unknown:
            raise KeyError(f"unknown parameter name(s): {', '.join(unknown)}")
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameter name(s): {', '.join(missing)}")
        for name, target in own.items():
            src = np.asarray(state[name])
            if src.shape != target.shape:
                raise T.ShapeError(f"{name}: expected shape {target.shape}, got {src.shape}")
            target[...] = src

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def astype(self, dtype):
        """Convert every parameter and buffer in place to ``dtype``."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for name, value in list(vars(self).items()):
            if isinstance(value, np.ndarray):
                setattr(self, name, value.astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)


class ConvLayer(Module):
    """Strided 2-D convolution, or its transpose when ``transposed`` is set.

    Weights are stored O×C×kh×kw for a plain convolution and C×O×kh×kw for a
    transposed one, so one array shared between the two gives adjoint maps.
    """

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, transposed=False,
                 rng=None, init_std=0.02, dtype=np.float32, bias=True):
        super().__init__()
        if in_ch <= 0 or out_ch <= 0 or kernel <= 0:
            raise ValueError("channel counts and kernel size must be positive")
        if stride <= 0 or padding < 0:
            raise ValueError("stride must be positive and padding nonnegative")
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (in_ch, out_ch, kernel, kernel) if transposed else (out_ch, in_ch, kernel, kernel)
        self.weight = Tensor((rng.standard_normal(shape) * init_std).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.transposed = transposed

    @property
    def in_channels(self):
        return self.weight.shape[0 if self.transposed else 1]

    @property
    def out_channels(self):
        return self.weight.shape[1 if self.transposed else 0]

    def __call__(self, x):
        fn = T.conv_transpose2d if self.transposed else T.conv2d
        return fn(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return T.batch_norm2d(
            x, self.gamma, self.beta, self.training,
            self.running_mean, self.running_var, self.momentum, self.eps,
        )
