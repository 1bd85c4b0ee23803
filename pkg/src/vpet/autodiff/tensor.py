"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a node that remembers its parents and a closure that pushes
the output gradient back to them. :meth:`Tensor.backward` walks the graph in
reverse topological order, visiting each node once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        # iterative post-order DFS; recursion would overflow on long tapes
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if parent is None or not parent.requires_grad or pg is None:
                    continue
                if parent._backward is None:
                    parent._accumulate(pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar ------------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            (a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: ((a, -g),))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batched semantics for ``ndim >= 2``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _node(out, (a, b), backward)


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(zip(ts, np.split(g, sizes, axis=axis)))

    return _node(out, ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, np.expand_dims(t.data, axis).shape) for t in ts]
    return concat(expanded, axis=axis)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    basic = all(
        isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
        for i in (idx if isinstance(idx, tuple) else (idx,))
    )

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return ((a, full),)

    return _node(np.array(out), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: ((a, g.reshape(a.shape)),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (a,), lambda g: ((a, np.transpose(g, inv)),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _node(np.array(out), (a,), lambda g: ((a, _unbroadcast(g, a.shape)),))


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape)),)

    return _node(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def tmax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximizing entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return ((a, full),)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# elementwise unary


def _unary(a, value: np.ndarray, dvalue: Callable[[], np.ndarray]) -> Tensor:
    return _node(value, (a,), lambda g: ((a, g * dvalue()),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(np.float64))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda: 1.0 - out**2)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.logaddexp(0.0, a.data), lambda: 0.5 * (1.0 + np.tanh(0.5 * a.data)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.sin(a.data), lambda: np.cos(a.data))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.cos(a.data), lambda: -np.sin(a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda: 0.5 / out)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data**2, lambda: 2.0 * a.data)


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.abs(a.data), lambda: np.sign(a.data))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values; gradient is zero where clipping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda: inside.astype(np.float64))


def norm(a, axis: int = -1, keepdims: bool = False, eps: float = 0.0) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data**2, axis=axis, keepdims=True) + eps)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return ((a, np.where(n > 0, g * a.data / safe, 0.0)),)

    return _node(n if keepdims else np.squeeze(n, axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# layers


def conv1d(x, w, b=None) -> Tensor:
    """Temporal convolution, stride 1, same padding.

    ``x`` is ``(N, T, C_in)``, ``w`` is ``(K, C_in, C_out)`` with odd ``K``,
    ``b`` is ``(C_out,)``. Returns ``(N, T, C_out)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects (N,T,C) input and (K,Cin,Cout) kernel, got {x.shape}, {w.shape}")
    k, cin, _ = w.shape
    if x.shape[2] != cin:
        raise ShapeError(f"conv1d: input has {x.shape[2]} channels, kernel expects {cin}")
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel size must be odd, got {k}")
    pad = k // 2
    T = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    out = sum(xp[:, i : i + T, :] @ w.data[i] for i in range(k))

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, i : i + T, :] += g @ w.data[i].T
            gx = gxp[:, pad : pad + T, :]
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack([xp[:, i : i + T, :].reshape(-1, cin).T @ g2 for i in range(k)])
        return ((x, gx), (w, gw))

    y = _node(out, (x, w), backward)
    if b is not None:
        y = add(y, b)
    return y


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(square(xc), axis=-1, keepdims=True)
    y = div(xc, sqrt(add(var, eps)))
    if gamma is not None:
        y = mul(y, gamma)
    if beta is not None:
        y = add(y, beta)
    return y


# ---------------------------------------------------------------------------
# quaternion kernels used by trajectory integration


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b) -> Tensor:
    """Hamilton product over the last axis (size 4), broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 4 or b.shape[-1] != 4:
        raise ShapeError(f"quat_mul needs trailing size 4, got {a.shape} and {b.shape}")
    out = _qmul(a.data, b.data)

    def backward(g):
        # the product is bilinear; L(q)^T = L(q*) and R(q)^T = R(q*)
        ga = _unbroadcast(_qmul(g, b.data * _CONJ), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_qmul(a.data * _CONJ, g), b.shape) if b.requires_grad else None
        return ((a, ga), (b, gb))

    return _node(out, (a, b), backward)


def quat_to_matrix(q) -> Tensor:
    """Rotation matrices ``(..., 3, 3)`` from unit quaternions ``(..., 4)``."""
    q = as_tensor(q)
    w, x, y, z = np.moveaxis(q.data, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    ).reshape(q.shape[:-1] + (3, 3))

    def backward(g):
        g = g.reshape(q.shape[:-1] + (9,))
        g00, g01, g02, g10, g11, g12, g20, g21, g22 = np.moveaxis(g, -1, 0)
        gw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
        gx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
        gy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
        gz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
        return ((q, np.stack([gw, gx, gy, gz], axis=-1)),)

    return _node(m, (q,), backward)
