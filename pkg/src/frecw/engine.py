"""Dense 2-D float64 tensors and a reverse-mode differentiation graph.

The graph is rebuilt for every loss evaluation and thrown away after the
backward pass; there is no persistent tape. Finished values are immutable
and safe to share across threads, while a graph under construction belongs
to a single thread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor2",
    "DiffNode",
    "AdamState",
    "leaf",
    "constant",
    "add",
    "sub",
    "scalar_mul",
    "matmul",
    "abs_",
    "square",
    "clamp",
    "relu",
    "sum_",
    "mean_",
    "l2norm",
    "reshape",
    "gather_cols",
    "concat_cols",
    "add_bias",
    "mse",
    "backward",
    "zero_grad",
    "adam_step",
]


def _as_matrix(data, copy=True):
    arr = np.array(data, dtype=np.float64, order="C", copy=copy)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


class Tensor2:
    """Immutable rows x cols matrix of finite 64-bit floats."""

    __slots__ = ("_array",)

    def __init__(self, data):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            raise ValueError("Tensor2 entries must all be finite")
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def _wrap(cls, arr):
        # Adopt an already-validated float64 array (or read-only view)
        # without copying. Internal: callers guarantee finiteness.
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        obj = object.__new__(cls)
        obj._array = arr
        return obj

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols)))

    @property
    def array(self):
        """Read-only float64 ndarray view of the data."""
        return self._array

    @property
    def rows(self):
        return self._array.shape[0]

    @property
    def cols(self):
        return self._array.shape[1]

    @property
    def shape(self):
        return self._array.shape

    def __repr__(self):
        return f"Tensor2(rows={self.rows}, cols={self.cols})"


def as_array(x):
    """Return the float64 2-D ndarray behind ``x`` (Tensor2 or array-like)."""
    if isinstance(x, Tensor2):
        return x.array
    return _as_matrix(x, copy=False)


class DiffNode:
    """One node of a reverse-mode differentiation graph.

    ``parents`` holds ``(node, vjp)`` pairs; each ``vjp`` maps the upstream
    gradient to that parent's contribution. :func:`backward` populates
    ``grad`` on every node lying on a path to a gradient-requiring leaf.
    """

    __slots__ = ("value", "parents", "op", "grad", "needs_grad")

    def __init__(self, value, parents=(), op="leaf", needs_grad=None):
        self.value = value
        self.parents = tuple(parents)
        self.op = op
        self.grad = None
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p, _ in self.parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.shape != (1, 1):
            raise ValueError(f"item() on non-scalar node of shape {self.value.shape}")
        return float(self.value[0, 0])

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, c):
        return scalar_mul(self, c)

    def __rmul__(self, c):
        return scalar_mul(self, c)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def abs(self):
        return abs_(self)

    def square(self):
        return square(self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def relu(self):
        return relu(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean_(self)

    def l2norm(self):
        return l2norm(self)

    def reshape(self, rows, cols):
        return reshape(self, rows, cols)

    def __repr__(self):
        return f"DiffNode(op={self.op!r}, shape={self.value.shape})"


def leaf(data, requires_grad=False):
    """Wrap a value as a graph leaf."""
    if isinstance(data, Tensor2):
        value = data.array
    else:
        value = _as_matrix(data, copy=False)
    return DiffNode(value, op="leaf", needs_grad=requires_grad)


def constant(data):
    return leaf(data, requires_grad=False)


def _lift(x):
    return x if isinstance(x, DiffNode) else constant(x)


def _require_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(
            f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}"
        )


# -- primitives -------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    _require_same_shape("add", a, b)
    return DiffNode(a.value + b.value,
                    [(a, lambda g: g), (b, lambda g: g)], op="add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _require_same_shape("sub", a, b)
    return DiffNode(a.value - b.value,
                    [(a, lambda g: g), (b, lambda g: -g)], op="sub")


def scalar_mul(a, c):
    a = _lift(a)
    c = float(c)
    return DiffNode(c * a.value, [(a, lambda g: c * g)], op="scalar_mul")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(
            f"matmul: shape mismatch {a.value.shape} vs {b.value.shape}"
        )
    av, bv = a.value, b.value
    return DiffNode(av @ bv,
                    [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
                    op="matmul")


def abs_(a):
    a = _lift(a)
    # subgradient 0 at exactly 0
    s = np.sign(a.value)
    return DiffNode(np.abs(a.value), [(a, lambda g: g * s)], op="abs")


def square(a):
    a = _lift(a)
    av = a.value
    return DiffNode(av * av, [(a, lambda g: g * (2.0 * av))], op="square")


def clamp(a, lo=None, hi=None):
    """Elementwise clamp into [lo, hi]; gradient 0 outside the interval."""
    a = _lift(a)
    lo_v = -np.inf if lo is None else float(lo)
    hi_v = np.inf if hi is None else float(hi)
    if lo_v > hi_v:
        raise ValueError(f"clamp: empty interval [{lo_v}, {hi_v}]")
    mask = (a.value >= lo_v) & (a.value <= hi_v)
    return DiffNode(np.clip(a.value, lo_v, hi_v),
                    [(a, lambda g: g * mask)], op="clamp")


def relu(a):
    return clamp(a, 0.0, None)


def sum_(a):
    a = _lift(a)
    shape = a.value.shape
    val = np.array([[a.value.sum()]])
    return DiffNode(val,
                    [(a, lambda g: np.full(shape, g[0, 0]))], op="sum")


def mean_(a):
    a = _lift(a)
    shape = a.value.shape
    n = a.value.size
    if n == 0:
        raise ValueError("mean: empty tensor")
    val = np.array([[a.value.mean()]])
    return DiffNode(val,
                    [(a, lambda g: np.full(shape, g[0, 0] / n))], op="mean")


def l2norm(a):
    """Flattened L2 norm, a 1x1 node; subgradient 0 at the origin."""
    a = _lift(a)
    av = a.value
    n = float(np.sqrt((av * av).sum()))

    def vjp(g):
        if n == 0.0:
            return np.zeros_like(av)
        return (g[0, 0] / n) * av

    return DiffNode(np.array([[n]]), [(a, vjp)], op="l2norm")


def reshape(a, rows, cols):
    a = _lift(a)
    if rows * cols != a.value.size:
        raise ValueError(
            f"reshape: cannot view {a.value.shape} as ({rows}, {cols})"
        )
    shape = a.value.shape
    return DiffNode(a.value.reshape(rows, cols),
                    [(a, lambda g: g.reshape(shape))], op="reshape")


def gather_cols(a, indices):
    """Select columns by index (duplicates allowed)."""
    a = _lift(a)
    idx = [int(i) for i in indices]
    cols = a.value.shape[1]
    for i in idx:
        if not 0 <= i < cols:
            raise ValueError(f"gather_cols: index {i} out of range for {cols} columns")
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (slice(None), idx), g)
        return out

    return DiffNode(a.value[:, idx], [(a, vjp)], op="gather_cols")


def concat_cols(nodes):
    """Concatenate nodes side by side along the column axis."""
    nodes = [_lift(n) for n in nodes]
    if not nodes:
        raise ValueError("concat_cols: no operands")
    rows = nodes[0].value.shape[0]
    for n in nodes:
        if n.value.shape[0] != rows:
            raise ValueError(
                f"concat_cols: row mismatch {n.value.shape} vs {rows} rows"
            )
    parents = []
    start = 0
    for n in nodes:
        stop = start + n.value.shape[1]
        parents.append((n, lambda g, s=start, e=stop: g[:, s:e]))
        start = stop
    return DiffNode(np.hstack([n.value for n in nodes]), parents, op="concat_cols")


def add_bias(a, b):
    """Add a column vector ``b`` to every column of ``a``."""
    a, b = _lift(a), _lift(b)
    if b.value.shape != (a.value.shape[0], 1):
        raise ValueError(
            f"add_bias: bias shape {b.value.shape} does not match {a.value.shape}"
        )
    return DiffNode(a.value + b.value,
                    [(a, lambda g: g),
                     (b, lambda g: g.sum(axis=1, keepdims=True))],
                    op="add_bias")


def mse(a, b):
    """Mean squared error as a 1x1 node."""
    return mean_(square(sub(a, b)))


# -- backward pass ----------------------------------------------------------


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.needs_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """Run reverse-mode accumulation from a scalar (1x1) root.

    Populates ``grad`` on every gradient-requiring node reachable from the
    root. Accumulation follows graph construction order, so repeated runs
    after :func:`zero_grad` produce bitwise identical gradients.
    """
    if root.value.shape != (1, 1):
        raise ValueError(
            f"backward: root must be 1x1, got shape {root.value.shape}"
        )
    order = _toposort(root)
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.needs_grad:
                continue
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def zero_grad(root):
    """Clear ``grad`` on every node reachable from ``root``."""
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        node.grad = None
        for parent, _ in node.parents:
            stack.append(parent)


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(params, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; returns (new params, new state)."""
    p = as_array(params)
    g = as_array(grad)
    if p.shape != g.shape or p.shape != state.m.shape:
        raise ValueError(
            f"adam_step: shape mismatch params {p.shape}, grad {g.shape}, "
            f"state {state.m.shape}"
        )
    if lr <= 0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    if not np.isfinite(g).all():
        raise ValueError("adam_step: non-finite gradient (diverged optimization)")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_p, AdamState(m, v, t)
