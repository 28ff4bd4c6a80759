"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors are plain float64 numpy arrays. A :class:`Node` wraps a tensor
value together with its parents and the vector-Jacobian product needed
for the backward sweep. Graphs are dynamic: build one per batch, call
:func:`backward` on a scalar node, read gradients off the leaves.

The one non-standard op is :func:`grad_reverse`, which is the identity
in the forward pass and multiplies the upstream gradient by ``-scale``
in the backward pass. It is what lets a min-max objective be optimized
in a single joint descent step.
"""

from __future__ import annotations

import numpy as np

LOG_CLAMP = 1e-12


class AutodiffError(ValueError):
    """Shape mismatch, non-scalar backward seed, or similar misuse."""


class NonFiniteError(AutodiffError):
    """A forward op produced NaN or Inf."""


class Node:
    """One vertex of the computation graph.

    ``value`` is the cached forward tensor, ``grad`` the accumulated
    gradient of the same shape (zeroed at the start of every backward
    pass). Leaves have no parents.
    """

    __slots__ = ("value", "grad", "parents", "_vjp", "op")

    def __init__(self, value, parents=(), vjp=None, op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"op '{op}' produced non-finite values")
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = tuple(parents)
        self._vjp = vjp
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(value) -> Node:
    """Wrap a raw array as a graph leaf (parameter or input)."""
    return Node(value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else leaf(x)


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise AutodiffError(
            f"matmul shape mismatch: {a.value.shape} x {b.value.shape}"
        )

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Node(a.value @ b.value, (a, b), vjp, op="matmul")


def add(a: Node, b) -> Node:
    """Elementwise add; one operand may be a scalar."""
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _reduce_to(g, a.value.shape), _reduce_to(g, b.value.shape)

    return Node(a.value + b.value, (a, b), vjp, op="add")


def mul(a: Node, b) -> Node:
    """Elementwise multiply; one operand may be a scalar."""
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return _reduce_to(g * b.value, a.value.shape), _reduce_to(g * a.value, b.value.shape)

    return Node(a.value * b.value, (a, b), vjp, op="mul")


def scale(a: Node, k: float) -> Node:
    """Multiply by a python constant (no graph node for the constant)."""
    a = as_node(a)
    return Node(a.value * k, (a,), lambda g: (g * k,), op="scale")


def add_bias(x: Node, b: Node) -> Node:
    """Add a bias row vector to every row of a matrix."""
    x, b = as_node(x), as_node(b)
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise AutodiffError(
            f"add_bias shape mismatch: {x.value.shape} + {b.value.shape}"
        )

    def vjp(g):
        return g, g.sum(axis=0)

    return Node(x.value + b.value, (x, b), vjp, op="add_bias")


def relu(x: Node) -> Node:
    x = as_node(x)
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return Node(np.where(mask, x.value, 0.0), (x,), vjp, op="relu")


def tanh(x: Node) -> Node:
    x = as_node(x)
    y = np.tanh(x.value)
    return Node(y, (x,), lambda g: (g * (1.0 - y * y),), op="tanh")


def exp(x: Node) -> Node:
    x = as_node(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return Node(y, (x,), lambda g: (g * y,), op="exp")


def sigmoid(x: Node) -> Node:
    x = as_node(x)
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.value))
    return Node(y, (x,), lambda g: (g * y * (1.0 - y),), op="sigmoid")


def log_clamped(x: Node) -> Node:
    """log(max(x, 1e-12)); gradient is zero in the clamped region."""
    x = as_node(x)
    clamped = np.maximum(x.value, LOG_CLAMP)
    active = x.value > LOG_CLAMP

    def vjp(g):
        return (np.where(active, g / clamped, 0.0),)

    return Node(np.log(clamped), (x,), vjp, op="log_clamped")


def stable_softmax(logits: Node) -> Node:
    """Row-wise softmax with max subtraction for overflow safety."""
    logits = as_node(logits)
    if logits.value.ndim != 2 or logits.value.shape[1] < 2:
        raise AutodiffError(f"softmax expects [B,K] with K>=2, got {logits.value.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner),)

    return Node(p, (logits,), vjp, op="stable_softmax")


def row_sum(x: Node) -> Node:
    """Sum over the last axis of a [B,K] tensor, yielding [B]."""
    x = as_node(x)
    if x.value.ndim != 2:
        raise AutodiffError(f"row_sum expects a matrix, got {x.value.shape}")
    cols = x.value.shape[1]

    def vjp(g):
        return (np.repeat(g[:, None], cols, axis=1),)

    return Node(x.value.sum(axis=1), (x,), vjp, op="row_sum")


def gather_rows(p: Node, idx) -> Node:
    """Pick p[i, idx[i]] for each row, yielding [B]."""
    p = as_node(p)
    idx = np.asarray(idx, dtype=np.int64)
    if p.value.ndim != 2 or idx.shape != (p.value.shape[0],):
        raise AutodiffError("gather_rows expects [B,K] tensor and [B] indices")
    if idx.min() < 0 or idx.max() >= p.value.shape[1]:
        raise AutodiffError("gather_rows index out of range")
    rows = np.arange(p.value.shape[0])

    def vjp(g):
        out = np.zeros_like(p.value)
        out[rows, idx] = g
        return (out,)

    return Node(p.value[rows, idx], (p,), vjp, op="gather_rows")


def reduce_sum(x: Node) -> Node:
    x = as_node(x)
    n = x.value.shape

    def vjp(g):
        return (np.full(n, float(g)),)

    return Node(x.value.sum(), (x,), vjp, op="sum")


def reduce_mean(x: Node) -> Node:
    x = as_node(x)
    count = x.value.size

    def vjp(g):
        return (np.full(x.value.shape, float(g) / count),)

    return Node(x.value.mean(), (x,), vjp, op="mean")


def weighted_sum(x: Node, weights) -> Node:
    """sum_i w_i * x_i with the weights treated as constants.

    No gradient flows into the weights; they are detached by contract.
    """
    x = as_node(x)
    w = np.asarray(weights, dtype=np.float64)
    if x.value.shape[0] != w.shape[0] or w.ndim != 1:
        raise AutodiffError(
            f"weighted_sum shape mismatch: x {x.value.shape}, w {w.shape}"
        )
    if x.value.ndim == 2 and x.value.shape[1] == 1:
        wv = w[:, None]
    elif x.value.ndim == 1:
        wv = w
    else:
        raise AutodiffError(f"weighted_sum expects [B] or [B,1], got {x.value.shape}")

    def vjp(g):
        return (float(g) * wv * np.ones_like(x.value),)

    return Node((wv * x.value).sum(), (x,), vjp, op="weighted_sum")


def grad_reverse(x: Node, grl_scale: float = 1.0) -> Node:
    """Identity forward; backward multiplies the upstream gradient by -scale."""
    x = as_node(x)
    if grl_scale <= 0:
        raise AutodiffError("grad_reverse scale must be positive")
    node = Node.__new__(Node)
    node.value = x.value  # bit-identical forward, no copy
    node.grad = np.zeros_like(x.value)
    node.parents = (x,)
    node._vjp = lambda g: (-grl_scale * g,)
    node.op = "grad_reverse"
    return node


def _check_broadcast(a: Node, b: Node, op: str) -> None:
    if a.value.shape == b.value.shape:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise AutodiffError(
        f"{op}: only scalar-vs-tensor broadcasting supported, "
        f"got {a.value.shape} vs {b.value.shape}"
    )


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.full(shape, g.sum()) if shape == () or np.prod(shape) == 1 else g.sum()


def topo_order(root: Node) -> list[Node]:
    """Nodes reachable from root in topological order (parents first)."""
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
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Reverse-accumulate d(loss)/d(node) into .grad over the whole graph.

    All gradients in the reachable graph are zeroed first, so repeated
    calls yield identical gradients.
    """
    if loss.value.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        g = node.grad if node.value.ndim > 0 else node.grad[()]
        parent_grads = node._vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            parent.grad = parent.grad + np.asarray(pg, dtype=np.float64).reshape(parent.value.shape)
