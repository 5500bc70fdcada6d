"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable quantity in latent4d is a :class:`DiffTensor`. Operations on tensors that
require gradients record a node holding its parents and a vector-Jacobian closure; operations
on constants record nothing. :func:`backward` collects the reachable nodes into a :class:`Tape`
in creation order and replays it in reverse.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Mapping, Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from .errors import NonScalarLoss, ShapeMismatch

Array = NDArray[np.float64]
BackwardFn = Callable[[Array], Sequence[Array | None]]

# Node ids only ever grow, so parents always precede children.
_node_ids = itertools.count()


class DiffTensor:
    """An n-dimensional float64 value that may participate in a gradient tape."""

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "node_id", "name")

    # Make ndarray <op> DiffTensor defer to the reflected DiffTensor operator.
    __array_ufunc__ = None

    def __init__(
        self,
        value: ArrayLike,
        *,
        requires_grad: bool = False,
        parents: tuple[DiffTensor, ...] = (),
        backward_fn: BackwardFn | None = None,
        name: str | None = None,
    ) -> None:
        self.value: Array = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.node_id: int | None = next(_node_ids) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def ndim(self) -> int:
        return int(self.value.ndim)

    @property
    def size(self) -> int:
        return int(self.value.size)

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    @property
    def T(self) -> DiffTensor:  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        return float(self.value.item())

    def __len__(self) -> int:
        return int(self.value.shape[0])

    def __repr__(self) -> str:
        if not self.requires_grad:
            tag = "const"
        else:
            tag = "param" if self.is_leaf else "node"
        label = f" {self.name}" if self.name else ""
        return f"DiffTensor({tag}{label}, shape={self.shape})"

    # Identity semantics: tensors key gradient maps.
    __hash__ = object.__hash__

    def __add__(self, other: TensorLike) -> DiffTensor:
        return add(self, other)

    def __radd__(self, other: TensorLike) -> DiffTensor:
        return add(other, self)

    def __sub__(self, other: TensorLike) -> DiffTensor:
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> DiffTensor:
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> DiffTensor:
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> DiffTensor:
        return mul(other, self)

    def __truediv__(self, other: TensorLike) -> DiffTensor:
        return div(self, other)

    def __rtruediv__(self, other: TensorLike) -> DiffTensor:
        return div(other, self)

    def __neg__(self) -> DiffTensor:
        return neg(self)

    def __pow__(self, exponent: TensorLike) -> DiffTensor:
        return power(self, exponent)

    def __matmul__(self, other: TensorLike) -> DiffTensor:
        return matmul(self, other)

    def __rmatmul__(self, other: TensorLike) -> DiffTensor:
        return matmul(other, self)

    def __getitem__(self, index: Any) -> DiffTensor:
        return getitem(self, index)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> DiffTensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> DiffTensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> DiffTensor:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            return reshape(self, shape[0])
        return reshape(self, shape)


TensorLike = DiffTensor | ArrayLike


def constant(value: ArrayLike, name: str | None = None) -> DiffTensor:
    """A tensor that never receives gradients."""
    return DiffTensor(value, name=name)


def parameter(value: ArrayLike, name: str | None = None) -> DiffTensor:
    """A leaf tensor whose gradient backward() reports."""
    return DiffTensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x: TensorLike) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _node(value: Array, parents: tuple[DiffTensor, ...], backward_fn: BackwardFn) -> DiffTensor:
    if any(p.requires_grad for p in parents):
        return DiffTensor(value, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return DiffTensor(value)


def _broadcast_shape(*shapes: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError as exc:
        raise ShapeMismatch(f"shapes {shapes} do not broadcast") from exc


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------------------------
# Elementwise primitives


def add(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g: Array) -> tuple[Array, Array]:
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g: Array) -> tuple[Array, Array]:
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g: Array) -> tuple[Array | None, Array | None]:
        ga = unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.value * b.value, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out = a.value / b.value

    def backward(g: Array) -> tuple[Array | None, Array | None]:
        ga = unbroadcast(g / b.value, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward)


def neg(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a: TensorLike, exponent: TensorLike) -> DiffTensor:
    a, e = as_tensor(a), as_tensor(exponent)
    _broadcast_shape(a.shape, e.shape)
    out = np.power(a.value, e.value)

    def backward(g: Array) -> tuple[Array | None, Array | None]:
        ga = None
        ge = None
        if a.requires_grad:
            ga = unbroadcast(g * e.value * np.power(a.value, e.value - 1.0), a.shape)
        if e.requires_grad:
            safe = np.where(a.value > 0, a.value, 1.0)
            ge = unbroadcast(g * out * np.log(safe), e.shape)
        return ga, ge

    return _node(out, (a, e), backward)


def exp(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sin(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return _node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return _node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def sqrt(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a: TensorLike) -> DiffTensor:
    """Absolute value; the subgradient at 0 is 0."""
    a = as_tensor(a)
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def relu(a: TensorLike) -> DiffTensor:
    """R[x] = max(x, 0); the subgradient at 0 is 0."""
    a = as_tensor(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: TensorLike, slope: float = 0.01) -> DiffTensor:
    a = as_tensor(a)
    scale = np.where(a.value > 0, 1.0, slope)
    return _node(a.value * scale, (a,), lambda g: (g * scale,))


def maximum(a: TensorLike, b: TensorLike) -> DiffTensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    pick_a = a.value >= b.value

    def backward(g: Array) -> tuple[Array, Array]:
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.value, b.value), (a, b), backward)


def minimum(a: TensorLike, b: TensorLike) -> DiffTensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    pick_a = a.value <= b.value

    def backward(g: Array) -> tuple[Array, Array]:
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.value, b.value), (a, b), backward)


def clamp(a: TensorLike, lo: float | None = None, hi: float | None = None) -> DiffTensor:
    a = as_tensor(a)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (a.value > lo_v) & (a.value < hi_v)
    return _node(np.clip(a.value, lo_v, hi_v), (a,), lambda g: (g * inside,))


def _logistic(x: Array) -> Array:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    x = a.value
    out = _logistic(x)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: TensorLike) -> DiffTensor:
    """log(1 + exp(x)), evaluated without overflow."""
    a = as_tensor(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    slope = _logistic(x)
    return _node(out, (a,), lambda g: (g * slope,))


def tanh(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def where(cond: ArrayLike, a: TensorLike, b: TensorLike) -> DiffTensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is not differentiated."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(cond, dtype=bool)
    _broadcast_shape(mask.shape, a.shape, b.shape)

    def backward(g: Array) -> tuple[Array, Array]:
        ga = unbroadcast(np.where(mask, g, 0.0), a.shape)
        gb = unbroadcast(np.where(mask, 0.0, g), b.shape)
        return ga, gb

    return _node(np.where(mask, a.value, b.value), (a, b), backward)


def broadcast_to(a: TensorLike, shape: tuple[int, ...]) -> DiffTensor:
    a = as_tensor(a)
    _broadcast_shape(a.shape, shape)
    out = np.broadcast_to(a.value, shape).copy()
    return _node(out, (a,), lambda g: (unbroadcast(g, a.shape),))


# ---------------------------------------------------------------------------------------------
# Shape, reductions and linear algebra


def reshape(a: TensorLike, shape: tuple[int, ...]) -> DiffTensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: TensorLike, axes: tuple[int, ...] | None = None) -> DiffTensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: TensorLike, index: Any) -> DiffTensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)
    out = a.value[index]

    def backward(g: Array) -> tuple[Array]:
        grad = np.zeros_like(a.value)
        np.add.at(grad, index, g)
        return (grad,)

    return _node(np.array(out, dtype=np.float64), (a,), backward)


Axis = int | tuple[int, ...] | None


def tsum(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> tuple[Array]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), backward)


def mean(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


def cumsum(a: TensorLike, axis: int = -1) -> DiffTensor:
    a = as_tensor(a)
    out = np.cumsum(a.value, axis=axis)

    def backward(g: Array) -> tuple[Array]:
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return _node(out, (a,), backward)


def cumprod(a: TensorLike, axis: int = -1) -> DiffTensor:
    """Inclusive cumulative product; the gradient is exact even where factors are zero."""
    a = as_tensor(a)
    x = np.moveaxis(a.value, axis, -1)
    out = np.cumprod(x, axis=-1)

    def backward(g: Array) -> tuple[Array]:
        gm = np.moveaxis(g, axis, -1)
        n = x.shape[-1]
        before = np.concatenate([np.ones_like(x[..., :1]), out[..., :-1]], axis=-1)
        gx = np.empty_like(x)
        for i in range(n):
            after = np.cumprod(x[..., i + 1 :], axis=-1)
            gx[..., i] = before[..., i] * (gm[..., i] + np.sum(gm[..., i + 1 :] * after, axis=-1))
        return (np.moveaxis(gx, -1, axis),)

    return _node(np.moveaxis(out, -1, axis), (a,), backward)


def matmul(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatch("matmul needs operands of rank >= 1")
    a2 = a.value if a.ndim > 1 else a.value[None, :]
    b2 = b.value if b.ndim > 1 else b.value[:, None]
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    out = np.matmul(a.value, b.value)

    def backward(g: Array) -> tuple[Array | None, Array | None]:
        g2 = g.reshape(out2.shape)
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(b.shape)
        return ga, gb

    return _node(np.asarray(out), (a, b), backward)


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> DiffTensor:
    parts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot concatenate {[p.shape for p in parts]}") from exc
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> list[Array]:
        return list(np.split(g, cuts, axis=axis))

    return _node(out, parts, backward)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> DiffTensor:
    parts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot stack {[p.shape for p in parts]}") from exc

    def backward(g: Array) -> list[Array]:
        return [np.take(g, i, axis=axis) for i in range(len(parts))]

    return _node(out, parts, backward)


def softmax(a: TensorLike, axis: int = -1) -> DiffTensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> tuple[Array]:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def conv2d(x: TensorLike, w: TensorLike, stride: int = 1, padding: int = 0) -> DiffTensor:
    """Cross-correlation of ``x`` (B, C, H, W) with ``w`` (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d input {x.shape} with kernel {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.value, pad)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", windows, w.value, optimize=True)
    ho, wo = out.shape[2], out.shape[3]

    def backward(g: Array) -> tuple[Array | None, Array | None]:
        gx = gw = None
        if w.requires_grad:
            gw = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("bohw,oc->bchw", g, w.value[:, :, i, j], optimize=True)
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
            h, wd = x.shape[2], x.shape[3]
            gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        return gx, gw

    return _node(out, (x, w), backward)


def global_norm(tensors: Iterable[Array]) -> float:
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in tensors)))


# ---------------------------------------------------------------------------------------------
# Tape and backward


class Gradients:
    """Gradients of a scalar with respect to the leaves of its tape."""

    def __init__(self, grads: dict[DiffTensor, Array]) -> None:
        self._grads = grads

    def __getitem__(self, leaf: DiffTensor) -> Array:
        grad = self._grads.get(leaf)
        return np.zeros_like(leaf.value) if grad is None else grad

    def __contains__(self, leaf: object) -> bool:
        return leaf in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def leaves(self) -> list[DiffTensor]:
        return list(self._grads)

    def for_params(self, params: Mapping[str, DiffTensor]) -> dict[str, Array]:
        return {name: self[p] for name, p in params.items()}


class Tape:
    """The recorded operations reachable from one output, in topological order."""

    def __init__(self, output: DiffTensor, nodes: list[DiffTensor]) -> None:
        self.output = output
        self.nodes = nodes

    @classmethod
    def record(cls, output: DiffTensor) -> Tape:
        seen: set[int] = set()
        nodes: list[DiffTensor] = []
        stack_: list[DiffTensor] = [output] if output.requires_grad else []
        while stack_:
            node = stack_.pop()
            assert node.node_id is not None
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            nodes.append(node)
            stack_.extend(p for p in node.parents if p.requires_grad)
        nodes.sort(key=lambda n: n.node_id if n.node_id is not None else -1)
        return cls(output, nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self) -> Gradients:
        """Replay the tape in reverse; repeated calls give bitwise-identical results."""
        leaf_grads: dict[DiffTensor, Array] = {}
        if not self.nodes:
            return Gradients(leaf_grads)
        adjoint: dict[int, Array] = {}
        out_id = self.output.node_id
        assert out_id is not None
        adjoint[out_id] = np.ones_like(self.output.value)
        for node in reversed(self.nodes):
            assert node.node_id is not None
            g = adjoint.pop(node.node_id, None)
            if node.is_leaf:
                leaf_grads[node] = np.zeros_like(node.value) if g is None else g
                continue
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g), strict=True):
                if pg is None or not parent.requires_grad:
                    continue
                assert parent.node_id is not None
                prev = adjoint.get(parent.node_id)
                adjoint[parent.node_id] = pg if prev is None else prev + pg
        return Gradients(leaf_grads)


def backward(loss: DiffTensor) -> Gradients:
    """Gradients of the scalar ``loss`` with respect to every leaf it depends on."""
    if loss.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    return Tape.record(loss).backward()


# ---------------------------------------------------------------------------------------------
# Finite-difference verification


def _relative_error(analytic: Array, numeric: Array) -> float:
    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_diff_check(
    f: Callable[[DiffTensor], DiffTensor],
    theta: ArrayLike,
    h: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> float:
    """Max relative error between backward() and central differences of ``f`` at ``theta``."""
    theta = np.array(theta, dtype=np.float64)
    param = parameter(theta)
    analytic = backward(f(param))[param].reshape(-1)
    flat = theta.reshape(-1)
    picks = range(flat.size) if indices is None else indices
    numeric = np.empty(len(picks))
    for n, i in enumerate(picks):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = f(constant(plus.reshape(theta.shape))).item()
        f_minus = f(constant(minus.reshape(theta.shape))).item()
        numeric[n] = (f_plus - f_minus) / (2.0 * h)
    return _relative_error(analytic[list(picks)], numeric)


def finite_diff_check_params(
    loss_fn: Callable[[], DiffTensor],
    params: Mapping[str, DiffTensor],
    picks: Sequence[tuple[str, int]],
    h: float = 1e-5,
) -> tuple[float, list[tuple[str, int, float, float]]]:
    """Check gradients of ``loss_fn`` for chosen (parameter, flat index) entries.

    The parameters are perturbed in place and restored. Returns the max relative error and a
    per-entry list of (name, index, analytic, numeric).
    """
    grads = backward(loss_fn()).for_params(params)
    rows: list[tuple[str, int, float, float]] = []
    for name, i in picks:
        flat = params[name].value.reshape(-1)
        original = flat[i]
        flat[i] = original + h
        f_plus = loss_fn().item()
        flat[i] = original - h
        f_minus = loss_fn().item()
        flat[i] = original
        rows.append((name, i, float(grads[name].reshape(-1)[i]), (f_plus - f_minus) / (2.0 * h)))
    if not rows:
        return 0.0, rows
    analytic = np.array([r[2] for r in rows])
    numeric = np.array([r[3] for r in rows])
    return _relative_error(analytic, numeric), rows
