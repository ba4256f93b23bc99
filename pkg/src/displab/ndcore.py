"""Dense-tensor arithmetic with reverse-mode differentiation.

A :class:`Tensor` wraps a row-major NumPy array (float32 for training,
float64 for verification work) and remembers the primitive application
that produced it. :func:`backward` replays that record in reverse
topological order and accumulates vector-Jacobian products into
``.grad``, adding contributions across fan-out.

Broadcasting is deliberately restricted to two cases so that every
gradient reduction is unambiguous:

* scalar operands (0-d arrays), and
* leading-batch alignment: the smaller operand's shape must equal a
  suffix of the larger's, e.g. ``(B, N, d) + (N, d)``.

Everything here is single-threaded per graph; tensors are immutable by
convention after creation and safe to share between independent graphs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ComputeGraph",
    "TensorError",
    "ShapeError",
    "DomainError",
    "GraphError",
    "evaluate_primitive",
    "register_primitive",
    "make_node",
    "backward",
    "zero_grads",
    "concatenate",
    "gather",
    "layer_norm",
    "logsumexp",
    "softmax",
    "take_last_axis",
]

_FLOAT_DTYPES = (np.float32, np.float64)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TensorError(Exception):
    """Base class for engine errors."""


class ShapeError(TensorError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{primitive}: incompatible shapes {joined}")


class DomainError(TensorError):
    """Input violates a primitive's value contract (e.g. arccos outside [-1, 1])."""


class GraphError(TensorError):
    """Graph misuse: unknown primitive, non-scalar backward root, etc."""


class Tensor:
    """A dense array plus the graph bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 op: str = "leaf", inputs: tuple = (), vjp=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.inputs = inputs
        self._vjp = vjp

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(op={self.op!r}, shape={self.data.shape}{flag})"

    # -- operator sugar (all routed through the primitive registry) -----

    def __add__(self, other):
        return evaluate_primitive("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return evaluate_primitive("sub", self, other)

    def __rsub__(self, other):
        return evaluate_primitive("sub", other, self)

    def __mul__(self, other):
        return evaluate_primitive("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return evaluate_primitive("div", self, other)

    def __rtruediv__(self, other):
        return evaluate_primitive("div", other, self)

    def __neg__(self):
        return evaluate_primitive("mul", self, -1.0)

    def __matmul__(self, other):
        return evaluate_primitive("matmul", self, other)

    def exp(self):
        return evaluate_primitive("exp", self)

    def log(self):
        return evaluate_primitive("log", self)

    def sqrt(self):
        return evaluate_primitive("sqrt", self)

    def square(self):
        return evaluate_primitive("square", self)

    def arccos(self):
        return evaluate_primitive("arccos", self)

    def clamp(self, lo: float, hi: float):
        return evaluate_primitive("clamp", self, lo=lo, hi=hi)

    def maximum(self, const: float):
        return evaluate_primitive("maximum", self, const=const)

    def sum(self, axis=None, keepdims: bool = False):
        return evaluate_primitive("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return evaluate_primitive("mean", self, axis=axis, keepdims=keepdims)

    def transpose(self, axes=None):
        return evaluate_primitive("transpose", self, axes=axes)

    def reshape(self, shape):
        return evaluate_primitive("reshape", self, shape=shape)

    def backward(self):
        backward(self)


class ComputeGraph:
    """Topologically ordered record of the primitives behind one root."""

    def __init__(self, nodes: list, root: Tensor):
        self.nodes = nodes
        self.root = root

    @classmethod
    def trace(cls, root: Tensor) -> "ComputeGraph":
        # Iterative DFS; training graphs can exceed the recursion limit.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order, root)


# ---------------------------------------------------------------------
# Registry and node construction
# ---------------------------------------------------------------------

PRIMITIVES: dict[str, Callable] = {}


def register_primitive(name: str, fn: Callable) -> None:
    PRIMITIVES[name] = fn


def evaluate_primitive(name: str, *inputs, **params) -> Tensor:
    """Apply a registered primitive to the given inputs.

    Inputs may be Tensors or plain scalars/arrays (lifted to constant
    leaves). Raises :class:`GraphError` for unknown primitive ids.
    """
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise GraphError(f"unknown primitive {name!r}") from None
    return fn(*inputs, **params)


def make_node(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap a primitive result; drops graph edges when no input needs grad."""
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, op=op, inputs=tuple(inputs), vjp=vjp)
    return Tensor(data, op=op)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------
# Broadcasting (scalar + leading-batch only)
# ---------------------------------------------------------------------

def _broadcast_ok(sa: tuple, sb: tuple) -> bool:
    if sa == sb or sa == () or sb == ():
        return True
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big):
        return False
    return big[len(big) - len(small):] == small


def _lift_pair(op: str, a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = _as_tensor(b, like=a)
    elif isinstance(b, Tensor):
        a = _as_tensor(a, like=b)
    else:
        a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ShapeError(op, a.data.shape, b.data.shape)
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output-shaped gradient back onto an operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


# ---------------------------------------------------------------------
# Primitive implementations
# ---------------------------------------------------------------------

def _prim_add(a, b):
    a, b = _lift_pair("add", a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_node("add", out, (a, b), vjp)


def _prim_sub(a, b):
    a, b = _lift_pair("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_node("sub", out, (a, b), vjp)


def _prim_mul(a, b):
    a, b = _lift_pair("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return make_node("mul", out, (a, b), vjp)


def _prim_div(a, b):
    a, b = _lift_pair("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: divisor contains zero")
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return make_node("div", out, (a, b), vjp)


def _prim_matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ShapeError("matmul", sa, sb)
    if len(sa) > 2 and len(sb) > 2 and sa[:-2] != sb[:-2]:
        raise ShapeError("matmul", sa, sb)
    out = a.data @ b.data

    def vjp(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = g @ bt
        gb = at @ g
        if ga.shape != sa:  # b batched, a a plain matrix
            ga = ga.reshape(-1, *sa).sum(axis=0) if ga.ndim > len(sa) else ga
            ga = ga.reshape(sa)
        if gb.shape != sb:  # a batched, b a plain matrix
            gb = gb.reshape(-1, *sb).sum(axis=0) if gb.ndim > len(sb) else gb
            gb = gb.reshape(sb)
        return ga, gb

    return make_node("matmul", out, (a, b), vjp)


def _prim_transpose(a, axes=None):
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return make_node("transpose", out, (a,), vjp)


def _prim_reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.data.shape, tuple(shape)) from None
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return make_node("reshape", out, (a,), vjp)


def _prim_exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return make_node("exp", out, (a,), vjp)


def _prim_log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return make_node("log", out, (a,), vjp)


def _prim_sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: input must be non-negative")
    out = np.sqrt(a.data)

    def vjp(g):
        # d sqrt(x) = 1 / (2 sqrt(x)); a zero input has an infinite slope,
        # callers guard with an epsilon before taking the root.
        return (g * (0.5 / np.where(out == 0, np.inf, out)),)

    return make_node("sqrt", out, (a,), vjp)


def _prim_square(a):
    a = _as_tensor(a)
    out = a.data * a.data

    def vjp(g):
        return (g * (2.0 * a.data),)

    return make_node("square", out, (a,), vjp)


def _prim_arccos(a):
    a = _as_tensor(a)
    if np.any(a.data < -1.0) or np.any(a.data > 1.0):
        raise DomainError("arccos: input outside [-1, 1]; clamp before calling")
    out = np.arccos(a.data)

    def vjp(g):
        # Unbounded at |x| = 1; the contract requires callers to clamp into
        # [-1+eps, 1-eps] first, which bounds this by 1/sqrt(2 eps - eps^2).
        return (-g / np.sqrt(1.0 - a.data * a.data),)

    return make_node("arccos", out, (a,), vjp)


def _prim_clamp(a, lo: float, hi: float):
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (g * inside.astype(g.dtype),)

    return make_node("clamp", out, (a,), vjp)


def _prim_maximum(a, const: float):
    a = _as_tensor(a)
    out = np.maximum(a.data, const)

    def vjp(g):
        # Subgradient 0 at the tie point x == const.
        return (g * (a.data > const).astype(g.dtype),)

    return make_node("maximum", out, (a,), vjp)


def _reduction_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _prim_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _reduction_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes if axes else None, keepdims=keepdims)

    def vjp(g):
        return (_expand_reduced(np.asarray(g), a.data.shape, axes, keepdims).astype(a.data.dtype, copy=False),)

    return make_node("sum", np.asarray(out), (a,), vjp)


def _prim_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _reduction_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    if count == 0:
        raise DomainError("mean: reduction over an empty axis")
    out = a.data.mean(axis=axes if axes else None, keepdims=keepdims)

    def vjp(g):
        expanded = _expand_reduced(np.asarray(g), a.data.shape, axes, keepdims)
        return ((expanded / count).astype(a.data.dtype, copy=False),)

    return make_node("mean", np.asarray(out), (a,), vjp)


def _prim_softmax(a, axis: int = -1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return make_node("softmax", out, (a,), vjp)


def _prim_logsumexp(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _reduction_axes(axis, a.data.ndim)
    for ax in axes:
        if a.data.shape[ax] == 0:
            raise DomainError("logsumexp: empty axis")
    red_axis = axes if axes else None
    m = a.data.max(axis=red_axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=red_axis, keepdims=True)
    out = m + np.log(s)
    if not keepdims:
        out = out.reshape([n for i, n in enumerate(a.data.shape) if i not in axes])

    def vjp(g):
        soft = e / s
        return (_expand_reduced(np.asarray(g), a.data.shape, axes, keepdims) * soft,)

    return make_node("logsumexp", np.asarray(out), (a,), vjp)


def _prim_layer_norm(x, gain, bias, eps: float = 1e-5):
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm", x.data.shape, gain.data.shape, bias.data.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(x.data.dtype, copy=False), dgain, dbias

    return make_node("layer_norm", out, (x, gain, bias), vjp)


def _prim_gelu(a):
    a = _as_tensor(a)
    x = a.data
    phi_big = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi_big

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return ((g * (phi_big + x * pdf)).astype(x.dtype, copy=False),)

    return make_node("gelu", out, (a,), vjp)


def _prim_gather(table, ids):
    """Row lookup into a 2-D table; ids is a plain integer array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError("gather", table.data.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DomainError(
            f"gather: id out of range for table with {table.data.shape[0]} rows")
    out = table.data[ids]

    def vjp(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (acc,)

    return make_node("gather", out, (table,), vjp)


def _prim_take_last_axis(a, ids):
    """Select one entry per row along the last axis (ids shaped like a[..., 0])."""
    a = _as_tensor(a)
    ids = np.asarray(ids)
    if ids.shape != a.data.shape[:-1]:
        raise ShapeError("take_last_axis", a.data.shape, ids.shape)
    idx = np.expand_dims(ids, -1)
    out = np.take_along_axis(a.data, idx, axis=-1)[..., 0]

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.put_along_axis(acc, idx, np.expand_dims(g, -1), axis=-1)
        return (acc,)

    return make_node("take_last_axis", out, (a,), vjp)


def _prim_concatenate(tensors, axis: int = 0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concatenate")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node("concatenate", out, tuple(ts), vjp)


for _name, _fn in [
    ("add", _prim_add), ("sub", _prim_sub), ("mul", _prim_mul), ("div", _prim_div),
    ("matmul", _prim_matmul), ("transpose", _prim_transpose), ("reshape", _prim_reshape),
    ("exp", _prim_exp), ("log", _prim_log), ("sqrt", _prim_sqrt), ("square", _prim_square),
    ("arccos", _prim_arccos), ("clamp", _prim_clamp), ("maximum", _prim_maximum),
    ("sum", _prim_sum), ("mean", _prim_mean), ("softmax", _prim_softmax),
    ("logsumexp", _prim_logsumexp), ("layer_norm", _prim_layer_norm),
    ("gelu", _prim_gelu), ("gather", _prim_gather),
    ("take_last_axis", _prim_take_last_axis), ("concatenate", _prim_concatenate),
]:
    register_primitive(_name, _fn)


# Friendly functional aliases.

def softmax(a, axis: int = -1) -> Tensor:
    return evaluate_primitive("softmax", a, axis=axis)


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    return evaluate_primitive("logsumexp", a, axis=axis, keepdims=keepdims)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    return evaluate_primitive("layer_norm", x, gain, bias, eps=eps)


def gelu(a) -> Tensor:
    return evaluate_primitive("gelu", a)


def gather(table, ids) -> Tensor:
    return evaluate_primitive("gather", table, ids)


def take_last_axis(a, ids) -> Tensor:
    return evaluate_primitive("take_last_axis", a, ids)


def concatenate(tensors: Iterable, axis: int = 0) -> Tensor:
    return evaluate_primitive("concatenate", tuple(tensors), axis=axis)


# ---------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------

def backward(root: Tensor) -> ComputeGraph:
    """Accumulate d(root)/d(leaf) into ``.grad`` for every reachable tensor.

    The root must be scalar. Leaves that do not require grad are left
    untouched (their gradient is implicitly zero, never an error).
    Returns the traced :class:`ComputeGraph` for introspection.
    """
    if not isinstance(root, Tensor):
        raise GraphError("backward root must be a Tensor")
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
    graph = ComputeGraph.trace(root)
    if not root.requires_grad:
        return graph
    root.grad = np.ones_like(root.data)
    for node in reversed(graph.nodes):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.data.dtype)
            if g.shape != parent.data.shape:
                g = g.reshape(parent.data.shape)
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad = parent.grad + g
    return graph


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
