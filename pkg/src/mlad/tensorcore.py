"""Float64 arrays with a small reverse-mode gradient engine.

Values are plain ``numpy`` arrays that have been validated (finite, float64)
and frozen read-only; a :class:`Node` couples such a value with an
accumulated gradient and the closures that push gradients to its parents.

Broadcasting is deliberately restricted: binary elementwise operations take
operands of identical shape or a scalar operand.  Anything else must go
through :func:`broadcast_to`, whose backward rule sums over the expanded
axes.  This keeps every gradient rule small enough to audit.

Gradients accumulate across calls to :func:`backward`; call
:meth:`Node.zero_grad` (or :func:`zero_grads`) between optimisation steps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError

__all__ = [
    "tensor", "Node", "leaf", "constant", "backward", "zero_grads", "grad_check",
    "matmul", "add", "sub", "mul", "div", "neg", "scale", "exp", "log", "sqrt",
    "square", "celu", "elementwise", "broadcast_to", "sum", "mean", "reshape",
    "transpose", "take", "concat", "logsumexp",
]


def tensor(data, *, copy: bool = True) -> np.ndarray:
    """Validate ``data`` as a committed tensor: float64, finite, read-only."""
    arr = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericDomainError(f"non-finite entries in tensor of shape {list(arr.shape)}")
    arr.setflags(write=False)
    return arr


GradFn = Callable[[np.ndarray], np.ndarray]


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "name", "op")

    def __init__(self, value, parents: Sequence[tuple["Node", GradFn]] = (),
                 requires_grad: bool | None = None, name: str | None = None,
                 op: str = "leaf"):
        self.value = value if _is_committed(value) else tensor(value)
        live = [(p, fn) for p, fn in parents if p.requires_grad]
        self.parents = tuple(live)
        if requires_grad is None:
            requires_grad = bool(live)
        self.requires_grad = requires_grad
        self.grad = np.zeros(self.value.shape)
        self.name = name
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.value.shape)

    def assign(self, value) -> None:
        """Replace a leaf's value (optimiser steps, finite differences)."""
        if self.parents:
            raise ContractError("only leaf nodes can be reassigned")
        value = tensor(value)
        if value.shape != self.value.shape:
            raise DimensionError(f"cannot assign shape {list(value.shape)} to {list(self.value.shape)}")
        self.value = value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node<{self.op}{tag} shape={list(self.shape)}>"

    # operator sugar; the module functions remain the reference API
    def __add__(self, other): return add(self, _lift(other))
    def __radd__(self, other): return add(_lift(other), self)
    def __sub__(self, other): return sub(self, _lift(other))
    def __rsub__(self, other): return sub(_lift(other), self)
    def __mul__(self, other): return mul(self, _lift(other))
    def __rmul__(self, other): return mul(_lift(other), self)
    def __truediv__(self, other): return div(self, _lift(other))
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def _is_committed(value) -> bool:
    return (isinstance(value, np.ndarray) and value.dtype == np.float64
            and not value.flags.writeable)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def leaf(value, name: str | None = None) -> Node:
    """A trainable parameter."""
    return Node(value, requires_grad=True, name=name)


def constant(value, name: str | None = None) -> Node:
    return Node(value, requires_grad=False, name=name, op="const")


def _result(value: np.ndarray, parents, op: str) -> Node:
    return Node(tensor(value, copy=False), parents, op=op)


# --------------------------------------------------------------------------
# backward pass


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
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
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node."""
    if root.value.size != 1 or root.value.ndim > 1:
        raise ContractError(f"backward needs a scalar root, got shape {list(root.shape)}")
    pending: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for node in reversed(_topo_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g
        for parent, fn in node.parents:
            contrib = fn(g)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib


def zero_grads(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.zero_grad()


# --------------------------------------------------------------------------
# linear algebra


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Node, b: Node) -> Node:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either 2-D (shared across the
    batch) or has the same leading axes as ``a``.
    """
    av, bv = a.value, b.value
    ok = av.ndim >= 2 and bv.ndim >= 2 and av.shape[-1] == bv.shape[-2]
    if ok and bv.ndim > 2:
        ok = av.shape[:-2] == bv.shape[:-2]
    if not ok:
        raise DimensionError(f"matmul shape mismatch: {list(av.shape)} x {list(bv.shape)}")
    out = av @ bv

    def grad_a(g):
        return g @ _swap(bv)

    def grad_b(g):
        gb = _swap(av) @ g
        if bv.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
        return gb

    return _result(out, [(a, grad_a), (b, grad_b)], "matmul")


# --------------------------------------------------------------------------
# elementwise


def _pair(a: Node, b: Node, kind: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise DimensionError(f"{kind}: incompatible shapes {list(sa)} and {list(sb)} "
                         "(only equal shapes or a scalar operand)")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    if int(np.prod(shape)) == g.size:
        return g.reshape(shape)
    return np.full(shape, g.sum())


def add(a: Node, b: Node) -> Node:
    _pair(a, b, "add")
    out = a.value + b.value
    return _result(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                         (b, lambda g: _unbroadcast(g, b.shape))], "add")


def sub(a: Node, b: Node) -> Node:
    _pair(a, b, "sub")
    out = a.value - b.value
    return _result(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                         (b, lambda g: _unbroadcast(-g, b.shape))], "sub")


def mul(a: Node, b: Node) -> Node:
    _pair(a, b, "mul")
    av, bv = a.value, b.value
    return _result(av * bv, [(a, lambda g: _unbroadcast(g * bv, a.shape)),
                             (b, lambda g: _unbroadcast(g * av, b.shape))], "mul")


def div(a: Node, b: Node) -> Node:
    _pair(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericDomainError("division by zero")
    out = av / bv
    return _result(out, [(a, lambda g: _unbroadcast(g / bv, a.shape)),
                         (b, lambda g: _unbroadcast(-g * out / bv, b.shape))], "div")


def neg(a: Node) -> Node:
    return _result(-a.value, [(a, lambda g: -g)], "neg")


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _result(a.value * c, [(a, lambda g: g * c)], "scale")


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return _result(out, [(a, lambda g: g * out)], "exp")


def log(a: Node) -> Node:
    av = a.value
    if np.any(av <= 0):
        raise NumericDomainError("log of non-positive value")
    return _result(np.log(av), [(a, lambda g: g / av)], "log")


def sqrt(a: Node) -> Node:
    av = a.value
    if np.any(av <= 0):
        raise NumericDomainError("sqrt needs strictly positive input")
    out = np.sqrt(av)
    return _result(out, [(a, lambda g: g * 0.5 / out)], "sqrt")


def square(a: Node) -> Node:
    av = a.value
    return _result(av * av, [(a, lambda g: 2.0 * g * av)], "square")


def celu(a: Node, alpha: float = 1.0) -> Node:
    """max(0, x) + min(0, alpha * (exp(x / alpha) - 1))."""
    av = a.value
    e = np.exp(np.minimum(av, 0.0) / alpha)
    out = np.maximum(av, 0.0) + np.minimum(0.0, alpha * (e - 1.0))
    slope = np.where(av > 0, 1.0, e)
    return _result(out, [(a, lambda g: g * slope)], "celu")


_UNARY = {"neg": neg, "exp": exp, "log": log, "sqrt": sqrt, "square": square, "celu": celu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a: Node, b=None) -> Node:
    """Dispatch by name; ``scale`` takes a Python number as ``b``."""
    if op_kind == "scale":
        return scale(a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ContractError(f"{op_kind} is unary")
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, _lift(b))
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# --------------------------------------------------------------------------
# shape and reductions


def broadcast_to(a: Node, shape) -> Node:
    """Explicit numpy-style broadcast; backward sums over expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {list(a.shape)} to {list(shape)}") from None
    src = a.shape
    lead = len(shape) - len(src)

    def grad(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        return g.sum(axis=axes, keepdims=True) if axes else g

    return _result(np.array(out), [(a, grad)], "broadcast")


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    out = a.value.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _result(out, [(a, grad)], "sum")


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Node, shape) -> Node:
    src = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {list(src)} to {list(shape)}") from None
    return _result(out, [(a, lambda g: g.reshape(src))], "reshape")


def transpose(a: Node, axes=None) -> Node:
    if axes is None:
        axes = tuple(range(a.value.ndim - 2)) + (a.value.ndim - 1, a.value.ndim - 2)
    inv = np.argsort(axes)
    return _result(np.transpose(a.value, axes), [(a, lambda g: np.transpose(g, inv))], "transpose")


def take(a: Node, indices, axis: int) -> Node:
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def grad(g):
        out = np.zeros(shape)
        np.add.at(out, (slice(None),) * (axis % len(shape)) + (idx,), g)
        return out

    return _result(np.take(a.value, idx, axis=axis), [(a, grad)], "take")


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    if not nodes:
        raise ContractError("concat of nothing")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise DimensionError("concat: shapes " + ", ".join(str(list(n.shape)) for n in nodes)) from None
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def piece(i):
        def grad(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(sl)]
        return grad

    return _result(out, [(n, piece(i)) for i, n in enumerate(nodes)], "concat")


def logsumexp(a: Node, axis: int = -1) -> Node:
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return _result(out, [(a, lambda g: np.expand_dims(g, axis) * soft)], "logsumexp")


# --------------------------------------------------------------------------
# finite-difference verification


def grad_check(f: Callable[[], Node], params: Sequence[Node], h: float = 1e-5) -> float:
    """Max over parameter entries of |analytic - numeric| / max(1, |numeric|).

    ``f`` rebuilds the graph from ``params`` on every call and must be
    deterministic; central differences with step ``h`` supply the reference.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"step h={h} outside [1e-6, 1e-4]")
    first = f()
    second = f()
    if not np.array_equal(first.value, second.value):
        raise ContractError("f is not deterministic (two forward passes disagree)")
    zero_grads(params)
    backward(first)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        base = p.value.copy()
        flat = base.reshape(-1)
        for i in range(flat.size):
            probe = flat.copy()
            probe[i] = flat[i] + h
            p.assign(probe.reshape(base.shape))
            up = float(f().value.sum())
            probe[i] = flat[i] - h
            p.assign(probe.reshape(base.shape))
            down = float(f().value.sum())
            numeric = (up - down) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        p.assign(base)
    return worst
