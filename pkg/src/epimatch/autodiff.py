"""Reverse-mode automatic differentiation on dense float64 arrays.

A small define-by-run engine: every operation returns a :class:`Node` that
wraps a numpy array together with vector-Jacobian callbacks onto its parent
nodes.  Graphs are rebuilt on every forward pass and traversed once by
:func:`backward`; there is no batch axis, one problem instance per graph.

Values are plain ``numpy.float64`` arrays with at most four axes.  Operations
accept raw arrays or scalars wherever a node is expected and treat them as
constants.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import DimMismatchError, NonFiniteLossError, NonScalarRootError

Array = np.ndarray

MAX_AXES = 4


def _as_value(x) -> Array:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim > MAX_AXES:
        raise DimMismatchError(f"tensors are limited to {MAX_AXES} axes, got {v.ndim}")
    return v


class Node:
    """One value in a computation graph.

    Attributes
    ----------
    value : ndarray
        The forward result, float64.
    parents : tuple
        Pairs ``(parent_node, vjp)`` where ``vjp`` maps the gradient of the
        loss with respect to this node onto the parent.
    grad : ndarray or None
        Populated by :func:`backward`; ``d loss / d value``.
    """

    __slots__ = ("value", "parents", "grad")

    def __init__(self, value, parents: tuple = ()):
        self.value = _as_value(value)
        self.parents = parents
        self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    # arithmetic sugar; keeps pipeline code readable
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={not self.parents})"


def wrap(x) -> Node:
    """Return ``x`` itself if it is a node, else a constant leaf node."""
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Node:
    a, b = wrap(a), wrap(b)
    ash, bsh = a.value.shape, b.value.shape
    return Node(a.value + b.value,
                ((a, lambda g: _unbroadcast(g, ash)),
                 (b, lambda g: _unbroadcast(g, bsh))))


def sub(a, b) -> Node:
    a, b = wrap(a), wrap(b)
    ash, bsh = a.value.shape, b.value.shape
    return Node(a.value - b.value,
                ((a, lambda g: _unbroadcast(g, ash)),
                 (b, lambda g: _unbroadcast(-g, bsh))))


def mul(a, b) -> Node:
    a, b = wrap(a), wrap(b)
    av, bv = a.value, b.value
    return Node(av * bv,
                ((a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape))))


def div(a, b) -> Node:
    a, b = wrap(a), wrap(b)
    av, bv = a.value, b.value
    return Node(av / bv,
                ((a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape))))


def scale(a, c: float) -> Node:
    a = wrap(a)
    c = float(c)
    return Node(a.value * c, ((a, lambda g: g * c),))


def relu(a) -> Node:
    a = wrap(a)
    mask = a.value > 0.0
    return Node(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),))


def tanh(a) -> Node:
    a = wrap(a)
    y = np.tanh(a.value)
    return Node(y, ((a, lambda g: g * (1.0 - y * y)),))


def softplus(a) -> Node:
    """log(1 + exp(x)), evaluated without overflow."""
    a = wrap(a)
    x = a.value
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Node(y, ((a, lambda g: g * sig),))


# --- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Node:
    a = wrap(a)
    ash = a.value.shape
    return Node(a.value.reshape(shape), ((a, lambda g: g.reshape(ash)),))


def transpose(a) -> Node:
    """Swap the last two axes."""
    a = wrap(a)
    if a.value.ndim < 2:
        raise DimMismatchError("transpose needs at least two axes")
    return Node(a.value.swapaxes(-1, -2), ((a, lambda g: g.swapaxes(-1, -2)),))


def concat(nodes, axis: int = -1) -> Node:
    """Concatenate along ``axis``; all other extents must agree."""
    nodes = [wrap(n) for n in nodes]
    values = [n.value for n in nodes]
    ndim = values[0].ndim
    ax = axis % ndim
    ref = values[0].shape
    for v in values[1:]:
        if v.ndim != ndim or any(v.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise DimMismatchError(f"concat shapes {ref} vs {v.shape} on axis {ax}")
    out = np.concatenate(values, axis=ax)
    parents = []
    start = 0
    for n, v in zip(nodes, values):
        stop = start + v.shape[ax]
        sl = tuple(slice(None) if i != ax else slice(start, stop) for i in range(ndim))
        parents.append((n, (lambda s: lambda g: g[s])(sl)))
        start = stop
    return Node(out, tuple(parents))


def slice_last(a, start: int, stop: int) -> Node:
    """Slice ``[start:stop]`` along the last axis."""
    a = wrap(a)
    ash = a.value.shape

    def vjp(g):
        out = np.zeros(ash)
        out[..., start:stop] = g
        return out

    return Node(a.value[..., start:stop], ((a, vjp),))


def gather_rows(a, idx) -> Node:
    """Index along the first axis; ``idx`` may be any integer array.

    Gradients are scatter-added back, so rows never selected receive an
    exactly zero gradient and the index array itself is treated as constant.
    """
    a = wrap(a)
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimMismatchError("gather_rows needs an integer index array")
    av = a.value
    tail = av.shape[1:]

    def vjp(g):
        out = np.zeros(av.shape)
        np.add.at(out, idx.ravel(), g.reshape((-1,) + tail))
        return out

    return Node(av[idx], ((a, vjp),))


def repeat_mid(a, k: int) -> Node:
    """Tile a 2-D array (n, d) into (n, k, d)."""
    a = wrap(a)
    if a.value.ndim != 2:
        raise DimMismatchError("repeat_mid expects a 2-D input")
    n, d = a.value.shape
    out = np.broadcast_to(a.value[:, None, :], (n, k, d))
    return Node(out, ((a, lambda g: g.sum(axis=1)),))


# --- contractions and reductions ---------------------------------------------

def matmul(a, b) -> Node:
    a, b = wrap(a), wrap(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise DimMismatchError("matmul operands need at least two axes")
    if av.shape[-1] != bv.shape[-2]:
        raise DimMismatchError(f"matmul inner dims {av.shape} @ {bv.shape}")
    out = av @ bv
    ash, bsh = av.shape, bv.shape

    def da(g):
        d = g @ bv.swapaxes(-1, -2)
        return d if d.shape == ash else _unbroadcast(d, ash)

    def db(g):
        d = av.swapaxes(-1, -2) @ g
        return d if d.shape == bsh else _unbroadcast(d, bsh)

    return Node(out, ((a, da), (b, db)))


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Node:
    a = wrap(a)
    ash = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, ash)

    return Node(out, ((a, vjp),))


def reduce_mean(a, axis: int | None = None, keepdims: bool = False) -> Node:
    a = wrap(a)
    ash = a.value.shape
    count = a.value.size if axis is None else ash[axis]
    out = a.value.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / count, ash)

    return Node(out, ((a, vjp),))


def softmax_rows(a) -> Node:
    """Softmax along the last axis, with row-max subtraction for stability."""
    a = wrap(a)
    x = a.value
    ex = np.exp(x - x.max(axis=-1, keepdims=True))
    y = ex / ex.sum(axis=-1, keepdims=True)
    return Node(y, ((a, lambda g: y * (g - (g * y).sum(axis=-1, keepdims=True))),))


CONTEXT_NORM_EPS = 1e-12


def context_normalize(a) -> Node:
    """Zero-mean, unit-variance per channel across the first axis.

    Normalisation statistics are taken over the n rows of an (n, d) input,
    one mean and variance per channel, with a variance guard of 1e-12 so a
    constant channel maps to zeros instead of dividing by zero.
    """
    a = wrap(a)
    x = a.value
    if x.ndim != 2:
        raise DimMismatchError("context_normalize expects an (n, d) input")
    mu = x.mean(axis=0)
    xc = x - mu
    var = np.mean(xc * xc, axis=0)
    inv = 1.0 / np.sqrt(var + CONTEXT_NORM_EPS)
    y = xc * inv

    def vjp(g):
        return inv * (g - g.mean(axis=0) - y * np.mean(g * y, axis=0))

    return Node(y, ((a, vjp),))


# --- graph traversal ---------------------------------------------------------

def _topo(root: Node) -> list[Node]:
    """Parents-before-children ordering of all nodes reachable from root."""
    seen: set[int] = set()
    order: list[Node] = []
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate ``d root / d node`` into ``grad`` of every reachable node.

    The root must hold a single scalar.  Gradient arrays are never mutated in
    place, so values returned by vjp callbacks may alias forward buffers.
    """
    if root.value.size != 1:
        raise NonScalarRootError(f"root has shape {root.value.shape}")
    order = _topo(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


# --- gradient verification ---------------------------------------------------

@dataclass
class GradReport:
    """Outcome of a finite-difference gradient check."""

    errors: dict[str, float]
    max_rel_error: float
    tol: float
    passed: bool

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradReport({status}, max_rel_error={self.max_rel_error:.3e}, tol={self.tol:g})"


def finite_diff_check(loss_fn: Callable[[Mapping[str, Node]], Node],
                      params: Mapping[str, Array],
                      step: float = 1e-5,
                      tol: float = 1e-4) -> GradReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    Parameters
    ----------
    loss_fn : callable
        Maps a dict of named parameter nodes to a scalar loss node.  It is
        re-invoked many times with perturbed parameters, so it must be pure.
    params : mapping
        Named float64 arrays; every entry of every array is perturbed.
    step : float
        Central difference step.
    tol : float
        Relative error bound; the denominator is
        ``max(|analytic|, |numeric|, 1e-8)`` per entry.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    leaves = {k: Node(v) for k, v in base.items()}
    loss = loss_fn(leaves)
    if loss.value.size != 1:
        raise NonScalarRootError("loss_fn must return a scalar node")
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("loss is not finite at the expansion point")
    backward(loss)
    analytic = {k: (leaves[k].grad if leaves[k].grad is not None
                    else np.zeros_like(base[k])) for k in base}

    def eval_at(arrays: Mapping[str, Array]) -> float:
        out = loss_fn({k: Node(v) for k, v in arrays.items()})
        val = float(out.value)
        if not np.isfinite(val):
            raise NonFiniteLossError("loss is not finite at a perturbed point")
        return val

    errors: dict[str, float] = {}
    worst = 0.0
    for name, arr in base.items():
        flat = arr.ravel()
        grad_flat = analytic[name].ravel()
        err = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = eval_at(base)
            flat[i] = saved - step
            lo = eval_at(base)
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * step)
            a = grad_flat[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            err = max(err, abs(a - numeric) / denom)
        errors[name] = err
        worst = max(worst, err)
    return GradReport(errors=errors, max_rel_error=worst, tol=tol, passed=worst < tol)
