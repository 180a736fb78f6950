"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed while a :class:`Tape` is active are recorded on it;
``Tape.gradient`` replays the record in reverse. Outside a tape nothing is
recorded, which is how inference runs.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

DTYPE = np.float64
_local = threading.local()


class ShapeError(ValueError):
    pass


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; tapes nest per thread.
    """

    def __init__(self):
        self.records: List[Tuple[Tensor, Tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, parents, backward))

    def gradient(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
        """Gradients of a scalar ``loss``.

        With ``params`` given, every one of them gets an entry (zeros when the
        loss does not depend on it).
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owned = set()  # ids whose buffer we allocated and may add into in place
        leaves: Dict[int, Tensor] = {}
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            owned.discard(id(out))
            for p, gp in zip(parents, fn(g)):
                if gp is None or not p.requires_grad:
                    continue
                key = id(p)
                leaves[key] = p
                prev = grads.get(key)
                if prev is None:
                    grads[key] = gp
                elif key in owned:
                    prev += gp
                else:
                    # asarray: 0-d sums come back as numpy scalars, which += would rebind
                    grads[key] = np.asarray(prev + gp)
                    owned.add(key)
        if id(loss) in grads:  # loss is itself a leaf
            leaves[id(loss)] = loss
        if params is None:
            return {leaves[k]: g for k, g in grads.items() if k in leaves}
        return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active Tape")
    return tape.gradient(loss, params)


def _result(data, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), fn)
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    return _result(
        a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, keep)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from None

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result(out, (a, b), fn)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays, not Tensors")
    out = a.data[index]

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (a,), fn)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` for an integer array of any shape."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    return getitem(table, index)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(tensors))
        )

    return _result(out, tensors, fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: {e}") from None

    def fn(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return _result(out, tensors, fn)


# ---------------------------------------------------------------------------
# reductions and normalizations


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[x] for x in axes]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def fn(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered * power(var + eps, -0.5) * gain + bias


# ---------------------------------------------------------------------------
# losses (each returns a scalar mean over the unmasked entries)


def _mask_weights(shape, mask) -> Tuple[np.ndarray, float]:
    if mask is None:
        w = np.ones(shape)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=DTYPE), shape)
    n = float(w.sum())
    return w, n


def bce_with_logits(logits: Tensor, targets, mask=None) -> Tensor:
    """Binary cross-entropy on logits, in the overflow-free form
    ``max(x, 0) - x*t + log(1 + exp(-|x|))``."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("bce_with_logits targets must lie in [0, 1]")
    x = logits.data
    w, n = _mask_weights(x.shape, mask)
    if n == 0:
        return Tensor(0.0)
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.array((per * w).sum() / n)
    return _result(out, (logits,), lambda g: (g * (_sigmoid(x) - t) * w / n,))


def cross_entropy(logits: Tensor, target_index, mask=None) -> Tensor:
    """Softmax cross-entropy over the last axis against integer classes."""
    logits = as_tensor(logits)
    idx = np.asarray(target_index, dtype=np.int64)
    if idx.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {idx.shape}")
    k = logits.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexError("cross_entropy target class out of range")
    x = logits.data
    w, n = _mask_weights(idx.shape, mask)
    if n == 0:
        return Tensor(0.0)
    m = x.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]
    picked = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    out = np.array(((lse - picked) * w).sum() / n)

    def fn(g):
        soft = np.exp(x - lse[..., None])
        np.put_along_axis(soft, idx[..., None], np.take_along_axis(soft, idx[..., None], -1) - 1.0, -1)
        return (g * soft * (w / n)[..., None],)

    return _result(out, (logits,), fn)


def mse(a: TensorLike, b: TensorLike, mask=None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    w, n = _mask_weights(a.shape, mask)
    if n == 0:
        return Tensor(0.0)
    diff = a.data - b.data
    out = np.array((diff * diff * w).sum() / n)
    return _result(out, (a, b), lambda g: (g * 2.0 * diff * w / n, -g * 2.0 * diff * w / n))


# ---------------------------------------------------------------------------
# initialization


def init_params(shape, scheme: str = "xavier", seed: int = 0, scale: float = 0.1) -> Tensor:
    """Deterministic parameter tensor.

    ``uniform`` draws from U(-scale, scale); ``xavier`` from U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)), fans taken from the first and last axes.
    """
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    if scheme == "uniform":
        a = float(scale)
    elif scheme == "xavier":
        fan_in = shape[0] if shape else 1
        fan_out = shape[-1] if len(shape) > 1 else 1
        a = np.sqrt(6.0 / (fan_in + fan_out))
    elif scheme == "zeros":
        return Tensor(np.zeros(shape), requires_grad=True)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    data = rng.uniform(-a, a, size=shape) if a > 0 else np.zeros(shape)
    return Tensor(data, requires_grad=True)


def sub_seed(seed: int, name: str) -> int:
    """Stable 63-bit seed derived from a base seed and a component name."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]):
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - state.lr * (update + state.weight_decay * p.data)
    return params


# ---------------------------------------------------------------------------
# named-tensor container

MAGIC = b"ORKDNT\x00\x01"
FORMAT_VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray], metadata: Optional[dict] = None) -> None:
    """Write tensors plus a JSON metadata block.

    Layout: magic, u32 version, u64 metadata length, metadata (UTF-8 JSON),
    u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
    u64 dims, little-endian float64 data. Tensors are written in name order.
    """
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(meta)), meta]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> Tuple[Dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a named-tensor container")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<IQ", buf, pos)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    pos += 12
    metadata = json.loads(buf[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + n].decode()
        pos += n
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(DTYPE)
        pos += 8 * size
    return tensors, metadata


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    n_coords: int = 50,
    h: float = 1e-4,
    seed: int = 0,
) -> dict:
    """Compare tape gradients with central finite differences.

    Coordinates are sampled round-robin over the parameter tensors so every
    tensor is probed. Returns the norm-wise relative error over all sampled
    coordinates plus the worst per-coordinate error.
    """
    with Tape() as tape:
        loss = loss_fn()
        analytic = tape.gradient(loss, list(params.values()))
    rng = np.random.default_rng(seed)
    names = sorted(params)
    coords = []
    while len(coords) < n_coords:
        for name in names:
            p = params[name]
            coords.append((name, tuple(int(rng.integers(0, s)) for s in p.shape)))
            if len(coords) >= n_coords and len(coords) >= len(names):
                break
    a_vals, n_vals = [], []
    for name, idx in coords:
        p = params[name]
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = loss_fn().item()
        p.data[idx] = orig - h
        down = loss_fn().item()
        p.data[idx] = orig
        n_vals.append((up - down) / (2 * h))
        a_vals.append(analytic[p][idx])
    a_vals, n_vals = np.array(a_vals), np.array(n_vals)
    denom = max(np.linalg.norm(a_vals), np.linalg.norm(n_vals), 1e-12)
    per = np.abs(a_vals - n_vals) / np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), 1e-6)
    return {
        "rel_error": float(np.linalg.norm(a_vals - n_vals) / denom),
        "max_coord_error": float(per.max()),
        "n_coords": len(coords),
        "analytic": a_vals,
        "numeric": n_vals,
    }
