"""Dense float64 tensors with tape-based reverse-mode differentiation.

The graph is define-by-run: while a `Tape` is active, every operation whose
inputs require gradients appends one entry to it. `backward` replays the tape
in reverse, visiting each recorded node exactly once. Leaves (tensors that
were never produced by a recorded op) receive their accumulated gradient in
`.grad`; leaves on the tape but off the path to the root get zeros.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

_ACTIVE_TAPES: list["Tape"] = []

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tape:
    """Ordered record of differentiable operations (a fresh one per forward)."""

    def __init__(self):
        self.entries = []  # (out, inputs, backward_fn)
        self._output_ids = set()

    def record(self, out, inputs, backward_fn):
        self.entries.append((out, inputs, backward_fn))
        self._output_ids.add(id(out))

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self.entries)


def _tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """A dense n-d float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def backward(self):
        if self._tape is None:
            raise ContractError("tensor was not recorded on any tape")
        backward(self, self._tape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, inputs, backward_fn):
    tape = _tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        out._tape = tape
        tape.record(out, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(root: Tensor, tape: Tape) -> None:
    """Accumulate gradients of scalar `root` into every leaf on `tape`."""
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if id(root) not in tape._output_ids:
        raise ContractError("backward root is not an output of the given tape")

    grads = {id(root): np.ones_like(root.data)}
    for out, inputs, backward_fn in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, ig in zip(inputs, backward_fn(g)):
            if ig is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig

    leaves = {}
    for _, inputs, _ in tape.entries:
        for t in inputs:
            if t.requires_grad and id(t) not in tape._output_ids:
                leaves[id(t)] = t
    for key, t in leaves.items():
        acc = grads.get(key)
        if acc is None:
            acc = np.zeros_like(t.data)
        else:
            acc = np.asarray(acc, dtype=np.float64).reshape(t.shape)
        t.grad = acc if t.grad is None else t.grad + acc


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def clip_min(x: Tensor, floor: float) -> Tensor:
    out = np.maximum(x.data, floor)
    mask = (x.data > floor).astype(np.float64)
    return _make(out, (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * phi

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (phi + x.data * pdf),)

    return _make(out, (x,), bwd)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.shape[a] for a in axis]))
    else:
        n = x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, x.shape),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(x.data[index].copy(), (x,), bwd)


def concat(xs, axis: int) -> Tensor:
    xs = list(xs)
    out = np.concatenate([t.data for t in xs], axis=axis)
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(xs), bwd)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# linear algebra and normalization


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a nonempty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bwd)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax needs a nonempty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    soft = np.exp(out)

    def bwd(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1] if x.data.ndim else 0
    if d < 1:
        raise DimensionError("layer_norm over a zero-length dimension")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        gi = g * gamma.data
        m1 = gi.mean(axis=-1, keepdims=True)
        m2 = (gi * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gi - m1 - xhat * m2)
        reduce_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# gather / scatter


def gather_tokens(x: Tensor, indices) -> Tensor:
    """Select rows along axis 1: x[B,T,d], indices[B,K] -> [B,K,d]."""
    idx = np.asarray(indices, dtype=np.int64)
    b = np.arange(x.shape[0])[:, None]
    out = x.data[b, idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (b, idx), g)
        return (gx,)

    return _make(out, (x,), bwd)


def gather_lastdim(x: Tensor, indices) -> Tensor:
    """Pick one entry per row: x[B,C], indices[B] -> [B]."""
    idx = np.asarray(indices, dtype=np.int64)
    b = np.arange(x.shape[0])
    out = x.data[b, idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (b, idx), g)
        return (gx,)

    return _make(out, (x,), bwd)
