"""Reverse-mode automatic differentiation over numpy arrays.

A computation is a DAG of :class:`Node` objects.  Each node stores a float64
array value, the nodes it was computed from, and a closure that maps the
gradient of the loss with respect to the node onto gradients with respect to
its parents.  :func:`backward` walks the graph once in reverse topological
order and accumulates gradients into every node that requires them.

The op set is deliberately small: the elementwise arithmetic, the smooth
max/min and softplus used by box volumes, dense affine layers, softmax,
reductions, and a few indexing ops whose backward passes are plain reshapes
so large pairwise expansions stay cheap.  Arrays are rank 0, 1, or 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

Array = np.ndarray

_log_clamp_count = 0


def log_clamp_count() -> int:
    """Number of elements clamped by :func:`log` since the last reset."""
    return _log_clamp_count


def reset_log_clamp_count() -> None:
    global _log_clamp_count
    _log_clamp_count = 0


class Node:
    """One value in the computation graph.

    ``requires_grad`` is inherited from parents, so constants stay out of the
    backward walk entirely.  ``uid`` is unique for the lifetime of the
    process and is what optimizer state is keyed on; ids are never reused,
    so replacing a parameter always gets fresh optimizer slots.
    """

    __slots__ = ("value", "grad", "requires_grad", "uid", "_parents", "_vjp")

    _next_uid = 0

    def __init__(
        self,
        value,
        parents: tuple["Node", ...] = (),
        vjp: Callable[[Array], tuple] | None = None,
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ValueError(f"arrays of rank {self.value.ndim} are not supported")
        self.grad: Array | None = None
        self._parents = parents
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.uid = Node._next_uid
        Node._next_uid += 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Node(shape={self.value.shape}{flag})"

    def __add__(self, other):
        return add(self, lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, lift(other))

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, lift(other))

    def __rtruediv__(self, other):
        return div(lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, lift(other))


def lift(x) -> Node:
    """Wrap ``x`` in a constant Node unless it already is one."""
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x)


def parameter(x) -> Node:
    """A leaf node that accumulates gradients."""
    return Node(np.array(x, dtype=np.float64), requires_grad=True)


def _topo_order(root: Node) -> list[Node]:
    """Post-order over the subgraph that requires gradients, iteratively."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` over the whole graph.

    ``loss`` must hold a single element.  Gradients add onto whatever is
    already in ``.grad``; call :func:`zero_grad` between steps.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.value)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(_topo_order(loss)):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def zero_grad(params: Sequence[Node]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Node, b: Node) -> Node:
    a, b = lift(a), lift(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Node(out, (a, b), vjp)


def sub(a: Node, b: Node) -> Node:
    a, b = lift(a), lift(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Node(out, (a, b), vjp)


def mul(a: Node, b: Node) -> Node:
    a, b = lift(a), lift(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Node(out, (a, b), vjp)


def div(a: Node, b: Node) -> Node:
    a, b = lift(a), lift(b)
    out = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return Node(out, (a, b), vjp)


def neg(a: Node) -> Node:
    return Node(-a.value, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a: Node) -> Node:
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Node(out, (a,), vjp)


def log(a: Node, floor: float = 1e-12) -> Node:
    """Natural log with inputs clamped at ``floor``.

    Clamping keeps the graph finite when a probability underflows to zero;
    every clamped element bumps the module counter so callers can tell it
    happened.
    """
    global _log_clamp_count
    clamped = np.maximum(a.value, floor)
    n_low = int(np.count_nonzero(a.value < floor))
    if n_low:
        _log_clamp_count += n_low
    out = np.log(clamped)

    def vjp(g):
        return (g / clamped,)

    return Node(out, (a,), vjp)


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)

    def vjp(g):
        return (g * (0.5 / out),)

    return Node(out, (a,), vjp)


def relu(a: Node) -> Node:
    out = np.maximum(a.value, 0.0)

    def vjp(g):
        return (g * (a.value > 0.0),)

    return Node(out, (a,), vjp)


def sigmoid(a: Node) -> Node:
    out = expit(a.value)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Node(out, (a,), vjp)


def softplus(a: Node, temp: float = 1.0) -> Node:
    """``temp * log(1 + exp(x / temp))``, stable for large |x|."""
    if temp <= 0.0:
        raise ValueError("softplus temperature must be positive")
    scaled = a.value / temp
    out = temp * np.logaddexp(0.0, scaled)

    def vjp(g):
        return (g * expit(scaled),)

    return Node(out, (a,), vjp)


def smooth_max(a: Node, b: Node, temp: float) -> Node:
    """``temp * logaddexp(a/temp, b/temp)``: a smooth, always-above max."""
    if temp <= 0.0:
        raise ValueError("smooth_max temperature must be positive")
    a, b = lift(a), lift(b)
    out = temp * np.logaddexp(a.value / temp, b.value / temp)

    def vjp(g):
        w = expit((a.value - b.value) / temp)
        return (
            _unbroadcast(g * w, a.value.shape),
            _unbroadcast(g * (1.0 - w), b.value.shape),
        )

    return Node(out, (a, b), vjp)


def smooth_min(a: Node, b: Node, temp: float) -> Node:
    """Smooth minimum: ``-smooth_max(-a, -b, temp)``, always below min."""
    if temp <= 0.0:
        raise ValueError("smooth_min temperature must be positive")
    a, b = lift(a), lift(b)
    out = -temp * np.logaddexp(-a.value / temp, -b.value / temp)

    def vjp(g):
        w = expit((b.value - a.value) / temp)
        return (
            _unbroadcast(g * w, a.value.shape),
            _unbroadcast(g * (1.0 - w), b.value.shape),
        )

    return Node(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Node, b: Node) -> Node:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Node(out, (a, b), vjp)


def affine(x: Node, w: Node, b: Node) -> Node:
    """``x @ w + b`` with the bias broadcast over rows."""
    return add(matmul(x, w), b)


def row_softmax(x: Node) -> Node:
    """Softmax along the last axis, max-shifted for stability."""
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - inner) * out,)

    return Node(out, (x,), vjp)


def logsumexp(x: Node, axis: int = -1, keepdims: bool = False) -> Node:
    m = x.value.max(axis=axis, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis=axis)
        return (g * soft,)

    return Node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Node, axis=None, keepdims: bool = False) -> Node:
    axes = _normalize_axes(axis, x.ndim)
    out = x.value.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            for a in sorted(axes):
                g = np.expand_dims(g, axis=a)
        return (np.broadcast_to(g, x.value.shape).copy(),)

    return Node(out, (x,), vjp)


def reduce_mean(x: Node, axis=None, keepdims: bool = False) -> Node:
    axes = _normalize_axes(axis, x.ndim)
    count = math.prod(x.value.shape[a] for a in axes)
    out = x.value.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            for a in sorted(axes):
                g = np.expand_dims(g, axis=a)
        return (np.broadcast_to(g / count, x.value.shape).copy(),)

    return Node(out, (x,), vjp)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    out = x.value.reshape(shape)

    def vjp(g):
        return (g.reshape(x.value.shape),)

    return Node(out, (x,), vjp)


def gather_rows(x: Node, idx) -> Node:
    """Select rows ``x[idx]``; backward scatter-adds duplicate indices."""
    idx = np.asarray(idx, dtype=np.intp)
    out = x.value[idx]

    def vjp(g):
        buf = np.zeros_like(x.value)
        np.add.at(buf, idx, g)
        return (buf,)

    return Node(out, (x,), vjp)


def repeat_rows(x: Node, n: int) -> Node:
    """Each row repeated ``n`` times in place: rows abc -> aabbcc for n=2.

    The backward pass is a reshape-and-sum, which keeps all-pairs
    expansions cheap compared with scatter-adds.
    """
    out = np.repeat(x.value, n, axis=0)

    def vjp(g):
        return (g.reshape(x.value.shape[0], n, *x.value.shape[1:]).sum(axis=1),)

    return Node(out, (x,), vjp)


def tile_rows(x: Node, n: int) -> Node:
    """The whole row block tiled ``n`` times: rows abc -> abcabc for n=2."""
    reps = (n,) + (1,) * (x.ndim - 1)
    out = np.tile(x.value, reps)

    def vjp(g):
        return (g.reshape(n, *x.value.shape).sum(axis=0),)

    return Node(out, (x,), vjp)


def gaussian_sample(mu: Node, sigma: Node, noise: Array) -> Node:
    """Reparameterized draw ``mu + sigma * noise`` with fixed noise."""
    return add(mu, mul(sigma, constant(noise)))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments keyed by parameter uid.

    ``step_count`` counts optimizer calls; bias correction uses a per-slot
    step so parameters created mid-run still get a proper warmup.
    """

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slots: dict[int, tuple[Array, Array, int]] = field(default_factory=dict)


def adam_step(params: Sequence[Node], grads: Sequence[Array | None], state: AdamState) -> None:
    """One Adam update, in place, with bias correction."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.step_count += 1
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.value.shape:
            raise ValueError(f"grad shape {g.shape} does not match param {p.value.shape}")
        m, v, t = state.slots.get(p.uid, (np.zeros_like(p.value), np.zeros_like(p.value), 0))
        t += 1
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.slots[p.uid] = (m, v, t)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def drop_adam_slots(state: AdamState, params: Sequence[Node]) -> None:
    """Forget moments for ``params``, e.g. after boxes are re-initialized."""
    for p in params:
        state.slots.pop(p.uid, None)


def global_norm(grads: Sequence[Array | None]) -> float:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_global_norm(grads: Sequence[Array | None], max_norm: float) -> float:
    """Scale all grads in place so their joint norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= scale
    return norm
