"""Minimal dense-array reverse-mode autodiff core.

Tensors wrap float64 numpy arrays. Every differentiable operation records a
node holding its inputs and a backward closure; the graph in creation order is
the tape, and ``backward`` walks it in reverse exactly once, accumulating
gradients additively across fan-out. Double precision throughout, no implicit
dtype changes. Single-threaded use per graph; independent graphs are
independent tapes.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Operand values are outside the op's domain (log of <= 0, div by 0)."""


_grad_enabled = True
_next_id = 0


def _new_id() -> int:
    global _next_id
    _next_id += 1
    return _next_id


class no_grad:
    """Context manager: ops inside do not record tape nodes."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class OpNode:
    """One tape entry: op kind, input tensors, output ids, backward closure.

    ``backward`` maps the output gradients (one per output, None meaning zero)
    to a tuple of input gradients (None for no contribution).
    """

    __slots__ = ("kind", "inputs", "out_ids", "backward", "order")

    def __init__(self, kind, inputs, out_ids, backward):
        self.kind = kind
        self.inputs = inputs
        self.out_ids = out_ids
        self.backward = backward
        self.order = _new_id()


class Tensor:
    __slots__ = ("data", "requires_grad", "tid", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.tid = _new_id()
        self.grad = None
        self.node = None  # OpNode that produced this tensor, if any

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar ------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind, inputs, outputs, backward) -> None:
    if not (_grad_enabled and any(t.requires_grad for t in inputs)):
        return
    node = OpNode(kind, inputs, [o.tid for o in outputs], backward)
    for o in outputs:
        o.requires_grad = True
        o.node = node


def _make_out(data) -> Tensor:
    return Tensor(data)


def custom_op(kind, inputs, outputs_data, backward):
    """Record a fused op with hand-written backward.

    ``backward(out_grads)`` receives one gradient array (or None) per output
    and returns one gradient array (or None) per input.
    """
    inputs = [as_tensor(t) for t in inputs]
    outs = [_make_out(d) for d in outputs_data]
    _record(kind, inputs, outs, backward)
    return outs


# -- broadcasting helpers ----------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, kind):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{kind}: cannot broadcast shapes {a.data.shape} and {b.data.shape}"
        ) from None


# -- elementwise binary ops ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = _make_out(a.data + b.data)

    def bwd(gs):
        (g,) = gs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _record("add", [a, b], [out], bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = _make_out(a.data - b.data)

    def bwd(gs):
        (g,) = gs
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    _record("sub", [a, b], [out], bwd)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = _make_out(a.data * b.data)

    def bwd(gs):
        (g,) = gs
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    _record("mul", [a, b], [out], bwd)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: divisor contains zero")
    out = _make_out(a.data / b.data)

    def bwd(gs):
        (g,) = gs
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    _record("div", [a, b], [out], bwd)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product: 1-d/2-d operands or stacked matrices with equal batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: needs >=1-d operands, got {a.shape} and {b.shape}")
    if a.ndim >= 2 and b.ndim >= 2:
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul: inner dims disagree for shapes {a.shape} and {b.shape}"
            )
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(
                f"matmul: batch dims must match, got {a.shape} and {b.shape}"
            )
    elif (a.ndim > 2 and b.ndim == 1) or (a.ndim == 1 and b.ndim > 2):
        raise ShapeError(
            f"matmul: vector against batched operand unsupported ({a.shape} @ {b.shape})"
        )
    out = _make_out(a.data @ b.data)

    def bwd(gs):
        (g,) = gs
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if b.ndim == 1:  # (n, k) @ (k,) -> (n,)
            return np.multiply.outer(g, b.data), a.data.T @ g
        if a.ndim == 1:  # (k,) @ (k, m) -> (m,)
            return b.data @ g, np.multiply.outer(a.data, g)
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    _record("matmul", [a, b], [out], bwd)
    return out


# -- elementwise unary ops -----------------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    out = _make_out(y)
    _record("exp", [x], [out], lambda gs: (gs[0] * y,))
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: operand has entries <= 0")
    out = _make_out(np.log(x.data))
    _record("log", [x], [out], lambda gs: (gs[0] / x.data,))
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _make_out(y)
    _record("tanh", [x], [out], lambda gs: (gs[0] * (1.0 - y * y),))
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = _make_out(np.maximum(x.data, 0.0))
    _record("relu", [x], [out], lambda gs: (gs[0] * (x.data > 0.0),))
    return out


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt: operand has negative entries")
    y = np.sqrt(x.data)
    out = _make_out(y)
    _record("sqrt", [x], [out], lambda gs: (gs[0] * 0.5 / np.maximum(y, 1e-300),))
    return out


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = _make_out(np.logaddexp(0.0, x.data))

    def bwd(gs):
        sig = 1.0 / (1.0 + np.exp(-x.data))
        return (gs[0] * sig,)

    _record("softplus", [x], [out], bwd)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax over one axis, with max subtraction for stability."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make_out(y)

    def bwd(gs):
        g = gs[0]
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    _record("softmax", [x], [out], bwd)
    return out


# -- shape ops -----------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = _make_out(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    _record("reshape", [x], [out], lambda gs: (gs[0].reshape(x.shape),))
    return out


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = _make_out(np.transpose(x.data, axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    _record("transpose", [x], [out], lambda gs: (np.transpose(gs[0], inv),))
    return out


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = _make_out(np.broadcast_to(x.data, shape).copy())
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}") from None
    _record("broadcast", [x], [out], lambda gs: (_unbroadcast(gs[0], x.shape),))
    return out


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = _make_out(np.concatenate([t.data for t in xs], axis=axis))
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(gs):
        return tuple(np.split(gs[0], splits, axis=axis))

    _record("concat", xs, [out], bwd)
    return out


def slice_(x, idx) -> Tensor:
    """Basic indexing (ints/slices/tuples). Backward scatters into zeros."""
    x = as_tensor(x)
    out = _make_out(x.data[idx].copy())

    def bwd(gs):
        g = np.zeros_like(x.data)
        g[idx] = gs[0]
        return (g,)

    _record("slice", [x], [out], bwd)
    return out


def index_rows(x, idx) -> Tensor:
    """Gather rows along axis 0 by integer index array (repeats allowed)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = _make_out(x.data[idx])

    def bwd(gs):
        g = np.zeros_like(x.data)
        np.add.at(g, idx, gs[0])
        return (g,)

    _record("index_rows", [x], [out], bwd)
    return out


# -- reductions ------------------------------------------------------------------


def _restore_dims(g, x_shape, axis, keepdims):
    if keepdims or axis is None:
        return g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(x_shape) for a in axes)
    shape = tuple(1 if i in axes else d for i, d in enumerate(x_shape))
    return np.reshape(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make_out(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(gs):
        g = _restore_dims(gs[0], x.shape, axis, keepdims)
        return (np.broadcast_to(g, x.shape).copy(),)

    _record("reduce_sum", [x], [out], bwd)
    return out


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make_out(x.data.mean(axis=axis, keepdims=keepdims))
    denom = x.size if axis is None else np.prod(
        [x.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)]
    )

    def bwd(gs):
        g = _restore_dims(gs[0], x.shape, axis, keepdims)
        return (np.broadcast_to(g / denom, x.shape).copy(),)

    _record("reduce_mean", [x], [out], bwd)
    return out


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    y = x.data.max(axis=axis, keepdims=keepdims)
    out = _make_out(y)

    def bwd(gs):
        g = _restore_dims(gs[0], x.shape, axis, keepdims)
        yk = _restore_dims(np.asarray(y), x.shape, axis, keepdims)
        mask = x.data == yk
        counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        return (mask * (g / counts),)

    _record("reduce_max", [x], [out], bwd)
    return out


# -- dispatch (spec surface for randomized op tests) -------------------------------

_OP_TABLE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "sqrt": sqrt,
    "softplus": softplus,
    "softmax": softmax,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "reduce_max": reduce_max,
    "broadcast": broadcast_to,
    "index_rows": index_rows,
}


def apply_op(kind: str, *args, **kwargs) -> Tensor:
    if kind not in _OP_TABLE:
        raise KeyError(f"unknown op kind: {kind!r}")
    return _OP_TABLE[kind](*args, **kwargs)


# -- backward ---------------------------------------------------------------------


class Tape:
    """The reachable graph below a loss, in creation (= topological) order."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        self.nodes = nodes


def _collect(loss: Tensor) -> Tape:
    seen = set()
    nodes = []
    stack = [loss.node] if loss.node is not None else []
    while stack:
        node = stack.pop()
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for t in node.inputs:
            if t.node is not None:
                stack.append(t.node)
    nodes.sort(key=lambda n: n.order)
    return Tape(nodes)


def backward(loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss.

    Returns the gradient table keyed by tensor id; tensors that do not
    participate in the loss are absent. Also stashes grads on the `.grad`
    attribute of participating tensors that require grad.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    table: dict[int, np.ndarray] = {loss.tid: np.ones(())}
    tape = _collect(loss)
    for node in reversed(tape.nodes):
        gs = [table.get(oid) for oid in node.out_ids]
        if all(g is None for g in gs):
            continue
        in_grads = node.backward(gs)
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if t.tid in table:
                table[t.tid] = table[t.tid] + g
            else:
                table[t.tid] = g
            if t.requires_grad and t.node is None:
                t.grad = table[t.tid]
    return table


# -- gradient checking ---------------------------------------------------------------


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic grad of f at x and central differences.

    The error is |analytic - numeric| normalized by the larger gradient's
    max-abs entry (per-entry normalization would amplify finite-difference
    round-off on entries that happen to sit near zero). f must map a Tensor
    to a scalar Tensor and be deterministic.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    y = f(probe)
    if y.data.ndim != 0:
        raise ShapeError("finite_diff_check: f must return a scalar")
    table = backward(y)
    analytic = table.get(probe.tid)
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.data.shape)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            xp = x.data.copy().reshape(-1)
            xp[i] = orig + step
            fp = f(Tensor(xp.reshape(x.data.shape))).item()
            xm = x.data.copy().reshape(-1)
            xm[i] = orig - step
            fm = f(Tensor(xm.reshape(x.data.shape))).item()
            num_flat[i] = (fp - fm) / (2.0 * step)

    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    err = np.abs(analytic - numeric) / scale
    return float(err.max()) if err.size else 0.0
