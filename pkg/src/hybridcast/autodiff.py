"""Small reverse-mode differentiation engine over dense numpy arrays.

Every differentiable operation appends one node to the active :class:`Tape`.
A node stores its parents' tape indices and a closure mapping the upstream
gradient to parent gradients, so :func:`backward` is a single reverse sweep
over the node list with no graph sorting.

>>> with Tape() as tape:
...     x = tape.leaf(3.0)
...     y = x * x
>>> backward(tape, y)[0]
array(6.)
"""
from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ShapeError", "Tensor", "Tape", "backward", "grad_check", "AdamState", "adam_step",
    "add", "sub", "neg", "mul", "div", "matmul", "sum", "mean", "max", "exp", "log",
    "tanh", "sigmoid", "softplus", "softmax", "layer_norm", "concat", "slice",
    "embedding_lookup", "relu", "elu", "reshape", "transpose", "solve", "lgamma",
    "logaddexp", "clip", "dropout",
]

class ShapeError(ValueError):
    pass


class Tensor:
    """Array value, optionally attached to a tape node."""

    __array_priority__ = 100
    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: "Tape | None" = None, index: int = -1):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Node:
    tag: str
    parents: tuple
    vjp: Callable | None


class Tape:
    """Append-only record of operations.

    Parent indices always precede the node that uses them, so the record is
    acyclic by construction.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def leaf(self, value) -> Tensor:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError("leaf values must be finite")
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append(_Node("leaf", (), None))
        self.leaves.append(t)
        return t

    def _record(self, tag, value, parents, vjp) -> Tensor:
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append(_Node(tag, tuple(p.index for p in parents), vjp))
        return t


def backward(tape: Tape, root: Tensor) -> list[np.ndarray]:
    """Gradients of a scalar ``root`` with respect to every leaf of ``tape``.

    Returned in leaf creation order; leaves that ``root`` does not depend on
    receive zeros.
    """
    if root.tape is not tape:
        raise ValueError("root was not recorded on this tape")
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[root.index] = np.ones_like(root.value)
    for i in range(root.index, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            grads[p] = pg if grads[p] is None else grads[p] + pg
    return [np.asarray(grads[t.index]) if grads[t.index] is not None else np.zeros_like(t.value)
            for t in tape.leaves]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(tag, value, inputs, vjp) -> Tensor:
    """Record ``value`` as the output of ``tag`` if any input is on a tape.

    ``vjp`` maps the upstream gradient to one gradient per input (constants
    receive and discard theirs).
    """
    tracked = [t for t in inputs if t.tape is not None]
    if not tracked:
        return Tensor(value)
    tape = tracked[0].tape
    if any(t.tape is not tape for t in tracked):
        raise ValueError("operands recorded on different tapes")
    mask = [t.tape is not None for t in inputs]

    def node_vjp(g):
        return [pg for pg, keep in zip(vjp(g), mask) if keep]

    return tape._record(tag, value, tracked, node_vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, tag: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{tag}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _op("add", a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _op("sub", a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _op("neg", -a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _op("mul", a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape),
                          _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.value / b.value
    return _op("div", out, (a, b),
               lambda g: (_unbroadcast(g / b.value, a.shape),
                          _unbroadcast(-g * out / b.value, b.shape)))


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least two dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.value @ b.value
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op("matmul", out, (a, b), vjp)


# -- reductions --------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)
    return _op("sum", out, (x,), lambda g: (np.array(_expand(g, x.shape, axis, keepdims)),))


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.value.mean(axis=axis, keepdims=keepdims)
    n = x.value.size / builtins.max(out.size, 1)
    return _op("mean", out, (x,),
               lambda g: (np.array(_expand(g, x.shape, axis, keepdims)) / n,))


def max(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    """Maximum; tied maxima share the gradient equally."""
    x = _as_tensor(x)
    out = x.value.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        full = _expand(out, x.shape, axis, keepdims)
        hit = (x.value == full).astype(np.float64)
        hit /= hit.sum(axis=axis, keepdims=True)
        return (hit * _expand(g, x.shape, axis, keepdims),)

    return _op("max", out, (x,), vjp)


# -- pointwise nonlinearities ------------------------------------------------

def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.value)
    return _op("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return _op("log", np.log(x.value), (x,), lambda g: (g / x.value,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.value)
    return _op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = special.expit(x.value)
    return _op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.value)
    return _op("softplus", out, (x,), lambda g: (g * special.expit(x.value),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.value > 0
    return _op("relu", np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,))


def elu(x) -> Tensor:
    x = _as_tensor(x)
    neg_part = np.expm1(np.minimum(x.value, 0.0))
    out = np.where(x.value > 0, x.value, neg_part)
    return _op("elu", out, (x,), lambda g: (g * np.where(x.value > 0, 1.0, neg_part + 1.0),))


def lgamma(x) -> Tensor:
    x = _as_tensor(x)
    return _op("lgamma", special.gammaln(x.value), (x,),
               lambda g: (g * special.digamma(x.value),))


def logaddexp(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "logaddexp")
    out = np.logaddexp(a.value, b.value)
    return _op("logaddexp", out, (a, b),
               lambda g: (_unbroadcast(g * np.exp(a.value - out), a.shape),
                          _unbroadcast(g * np.exp(b.value - out), b.shape)))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    x = _as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _op("clip", np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _op("softmax", out, (x,),
               lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine part)."""
    x = _as_tensor(x)
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _op("layer_norm", xhat, (x,), vjp)


# -- structural ---------------------------------------------------------------

def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(x.shape) for x in xs)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _op("concat", out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice(x, idx) -> Tensor:  # noqa: A001
    x = _as_tensor(x)

    def vjp(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return (out,)

    return _op("slice", x.value[idx], (x,), vjp)


def embedding_lookup(table, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array ``ids``."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids, g)
        return (out,)

    return _op("embedding_lookup", table.value[ids], (table,), vjp)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot map {x.shape} to {shape}") from None
    return _op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _op("transpose", np.transpose(x.value, axes), (x,),
               lambda g: (np.transpose(g, inv),))


def solve(a, b) -> Tensor:
    """Batched linear solve ``a^{-1} b`` for ``a`` of shape (..., n, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or b.ndim < 2 or b.shape[-2] != a.shape[-1]:
        raise ShapeError(f"solve: incompatible shapes {a.shape} and {b.shape}")
    out = np.linalg.solve(a.value, b.value)

    def vjp(g):
        gb = np.linalg.solve(np.swapaxes(a.value, -1, -2), g)
        ga = -gb @ np.swapaxes(out, -1, -2)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op("solve", out, (a, b), vjp)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    x = _as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# -- checking and optimisation ---------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative gap between the tape gradient of ``f`` and central differences.

    The relative error per coordinate is
    ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    x = np.array(x, dtype=np.float64)
    with Tape() as tape:
        leaf = tape.leaf(x)
        out = f(leaf)
    analytic = backward(tape, out)[0] if out.tape is tape else np.zeros_like(x)

    def value_at(v):
        with Tape() as t:
            return float(f(t.leaf(v)).value)

    numeric = np.empty_like(x)
    flat = numeric.reshape(-1)
    for i in range(x.size):
        xp, xm = x.copy().reshape(-1), x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (value_at(xp.reshape(x.shape)) - value_at(xm.reshape(x.shape))) / (2 * h)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if not state.m:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state differ in length")
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)
