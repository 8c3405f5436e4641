"""A small define-by-run reverse-mode differentiation engine on top of numpy.

Every value is a float64 :class:`Tensor`.  Operations whose inputs require
gradients record a backward closure; :func:`backward` walks the resulting
graph in reverse topological order and accumulates ``grad`` on the leaves.

>>> x = Tensor(3.0, requires_grad=True)
>>> backward(x * x)
>>> float(x.grad)
6.0
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, InvalidParameterError

NORM_EPS = 1e-12

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "node_id", "_parents", "_backward")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    # ----------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Create an op output, recording the backward closure only when needed."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data**exponent, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out + NORM_EPS),), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clip_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; gradient passes only where ``a`` is above the floor."""
    a = as_tensor(a)
    keep = a.data > floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "clip_min")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU (smooth everywhere, so finite differences behave)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw, "gelu")


# ----------------------------------------------------------------- reductions
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def norm(a, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean (Frobenius for axis=None) norm; gradient uses an eps-guarded denominator."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=keepdims))

    def bw(g):
        o = out
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            o = np.expand_dims(o, axis)
        return (g * a.data / (o + NORM_EPS),)

    return _make(out, (a,), bw, "norm")


# ------------------------------------------------------------ shape movement
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


# --------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        # promote vectors the way np.matmul does, then squeeze back
        a2 = reshape(a, (1,) + a.shape) if a.ndim == 1 else a
        b2 = reshape(b, b.shape + (1,)) if b.ndim == 1 else b
        out = matmul(a2, b2)
        if a.ndim == 1:
            out = reshape(out, out.shape[:-2] + out.shape[-1:])
        if b.ndim == 1:
            out = reshape(out, out.shape[:-1])
        return out

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -------------------------------------------------------------- fused kernels
def softmax(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Softmax of ``logits / temperature`` along ``axis``."""
    if not temperature > 0:
        raise InvalidParameterError(f"temperature must be > 0, got {temperature}")
    x = as_tensor(logits)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise InvalidParameterError("softmax needs a non-empty last axis")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot) / temperature,)

    return _make(out, (x,), bw, "softmax")


def log_softmax(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if not temperature > 0:
        raise InvalidParameterError(f"temperature must be > 0, got {temperature}")
    x = as_tensor(logits)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def bw(g):
        return ((g - probs * g.sum(axis=axis, keepdims=True)) / temperature,)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalisation over the last axis."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = g * gain.data
        n = x.shape[-1]
        dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), bw, "layer_norm")


# ------------------------------------------------------------------ composites
def normalize(x, axis: int = -1) -> Tensor:
    """Scale to unit L2 norm along ``axis`` (eps-guarded)."""
    x = as_tensor(x)
    return x / (norm(x, axis=axis, keepdims=True) + NORM_EPS)


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two vectors; raises on zero-norm inputs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidParameterError(f"cosine_sim expects two equal-length vectors, got {a.shape} and {b.shape}")
    ss = tsum(a * a) * tsum(b * b)
    if not ss.data > 0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    # one square root of the product keeps hand-checkable cases exact
    raw = tsum(a * b) / sqrt(ss)
    # rounding can overshoot +-1 by an ulp; clamp the value, pass the gradient through
    return _make(np.clip(raw.data, -1.0, 1.0), (raw,), lambda g: (g,), "clip_unit")


def attention(q, k, v, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over the last two axes.

    Returns the attended values and the attention probabilities (as a plain array).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + np.where(mask, 0.0, -1e30)
    probs = softmax(scores, axis=-1)
    return matmul(probs, v), probs.data


# ------------------------------------------------------------------- backward
@dataclass
class RecordEntry:
    op: str
    inputs: tuple[int, ...]
    output: int


@dataclass
class ComputationRecord:
    """Topologically ordered trace of the nodes leading to one output."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> ComputationRecord:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and parent.node_id not in seen:
                    stack.append((parent, False))
        return cls(order)

    @property
    def entries(self) -> list[RecordEntry]:
        return [RecordEntry(n.op, tuple(p.node_id for p in n._parents), n.node_id) for n in self.nodes]

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def backward(loss: Tensor, record: ComputationRecord | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if loss.data.size != 1:
        raise InvalidParameterError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    record = record or ComputationRecord.trace(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(record.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


def grad_of(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` via reverse accumulation."""
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    backward(out)
    return np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad


def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between the reverse-mode gradient and central differences.

    The error per coordinate is ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    x = np.array(as_tensor(x).data, dtype=np.float64)
    analytic = grad_of(f, x)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x)).item()
        flat[i] = orig - h
        fm = f(Tensor(x)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0
