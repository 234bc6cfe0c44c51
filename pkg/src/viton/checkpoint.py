"""Binary checkpoint format for network weights and optimizer state.

Layout (all integers little-endian)::

    magic        8 bytes  b"VTONCKPT"
    version      u32
    step         u64      global training step
    seed         u64
    meta_len     u32, then meta_len bytes of UTF-8 JSON (sorted keys)
    n_records    u32
    record       u16 name_len, name, u8 ndim, ndim × u32 dims, float32 data
    has_optim    u8
    [optimizer]  u64 step_count, 4 × f64 (lr, beta1, beta2, epsilon),
                 u32 n, then n first-moment records and n second-moment records

Records hold parameters and buffers (batch-norm running statistics) by
their dotted module names.  Values are stored as float32, so loading and
saving again reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState
from .tensor import ShapeError

MAGIC = b"VTONCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class TruncatedCheckpointError(CheckpointError):
    def __init__(self, offset, wanted, available):
        super().__init__(
            f"checkpoint truncated at byte offset {offset}: needed {wanted} bytes, {available} left"
        )
        self.offset = offset


class VersionMismatchError(CheckpointError):
    def __init__(self, found, expected=VERSION):
        super().__init__(f"checkpoint version {found} is not supported (expected {expected})")
        self.found, self.expected = found, expected


@dataclass
class Checkpoint:
    records: dict  # name -> float32 array
    step: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)
    optimizer: AdamState | None = None
    # parameter names the optimizer moments belong to, in order
    optimizer_names: tuple = ()


# ---- encoding -------------------------------------------------------------

def _record(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def to_bytes(ckpt):
    out = [MAGIC, struct.pack("<IQQ", VERSION, ckpt.step, ckpt.seed)]
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(meta)) + meta)
    out.append(struct.pack("<I", len(ckpt.records)))
    out.extend(_record(n, a) for n, a in ckpt.records.items())
    opt = ckpt.optimizer
    if opt is None or not opt.first_moment:
        out.append(struct.pack("<B", 0))
    else:
        names = ckpt.optimizer_names
        if len(names) != len(opt.first_moment):
            raise CheckpointError("optimizer moments and parameter names differ in count")
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<Q4d", opt.step_count, opt.learning_rate, opt.beta1, opt.beta2,
                               opt.epsilon))
        out.append(struct.pack("<I", len(names)))
        out.extend(_record(n, m) for n, m in zip(names, opt.first_moment))
        out.extend(_record(n, v) for n, v in zip(names, opt.second_moment))
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(self.pos, n, len(self.buf) - self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self):
        (name_len,) = self.unpack("<H")
        try:
            name = self.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"corrupt record name at byte offset {self.pos}") from e
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        return name, data


def from_bytes(buf):
    r = _Reader(bytes(buf))
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {magic!r}")
    version, step, seed = r.unpack("<IQQ")
    if version != VERSION:
        raise VersionMismatchError(version)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n,) = r.unpack("<I")
    records = {}
    for _ in range(n):
        name, data = r.record()
        if name in records:
            raise CheckpointError(f"duplicate record {name!r}")
        records[name] = data
    (has_opt,) = r.unpack("<B")
    opt, names = None, ()
    if has_opt:
        step_count, lr, b1, b2, eps = r.unpack("<Q4d")
        (k,) = r.unpack("<I")
        first = [r.record() for _ in range(k)]
        second = [r.record() for _ in range(k)]
        names = tuple(nm for nm, _ in first)
        if names != tuple(nm for nm, _ in second):
            raise CheckpointError("optimizer moment records are out of order")
        opt = AdamState(lr, b1, b2, eps, step_count, [a for _, a in first], [a for _, a in second])
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after offset {r.pos}")
    return Checkpoint(records, step, seed, meta, opt, names)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())


# ---- module glue ----------------------------------------------------------

def capture(module, optimizer=None, step=0, seed=0, meta=None):
    """Snapshot ``module`` (and optionally its :class:`~viton.optim.Adam`)."""
    records = {n: np.array(a, dtype=np.float32) for n, a in module.state_dict().items()}
    opt, names = None, ()
    if optimizer is not None:
        by_id = {id(t): n for n, t in module.named_parameters()}
        try:
            names = tuple(by_id[id(p)] for p in optimizer.params)
        except KeyError:
            raise CheckpointError("optimizer holds parameters that are not part of the module")
        s = optimizer.state
        opt = AdamState(s.learning_rate, s.beta1, s.beta2, s.epsilon, s.step_count,
                        [np.array(m, dtype=np.float32) for m in s.first_moment],
                        [np.array(v, dtype=np.float32) for v in s.second_moment])
    return Checkpoint(records, int(step), int(seed), dict(meta or {}), opt, names)


def restore(module, ckpt, optimizer=None):
    """Load weights into ``module``; unknown or missing names raise."""
    try:
        module.load_state_dict(ckpt.records)
    except KeyError as e:
        raise CheckpointError(f"checkpoint does not match the network: {e.args[0]}") from None
    except ShapeError as e:
        raise CheckpointError(f"checkpoint does not match the network: {e}") from None
    if optimizer is not None and ckpt.optimizer is not None:
        params = dict(module.named_parameters())
        if set(params) != set(ckpt.optimizer_names):
            raise CheckpointError("optimizer state names do not match the network parameters")
        order = {n: i for i, n in enumerate(ckpt.optimizer_names)}
        optimizer.params = [params[n] for n in ckpt.optimizer_names]
        s = ckpt.optimizer
        dtype = optimizer.params[0].data.dtype if optimizer.params else np.float32
        optimizer.state = AdamState(
            s.learning_rate, s.beta1, s.beta2, s.epsilon, s.step_count,
            [s.first_moment[order[n]].astype(dtype) for n in ckpt.optimizer_names],
            [s.second_moment[order[n]].astype(dtype) for n in ckpt.optimizer_names],
        )
    return module
