"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of operations the conditioning blocks need are provided.
Broadcasting is limited to the bias-add case: a 1-D operand whose length
equals the trailing dimension of the other operand, or a Python scalar.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()


class DimensionError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable float64 array plus an optional gradient buffer.

    Non-leaf tensors remember their parents and a backward rule; the
    creation sequence number orders them on the implicit tape.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = _frozen(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)
        self._consumed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        out.data = _frozen(arr if arr.flags.c_contiguous else arr.copy())
        out.grad = None
        out._seq = next(_seq)
        out._consumed = False
        tracked = any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        out._parents = tuple(parents) if tracked else ()
        out._backward = backward if tracked else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assign(self, values) -> None:
        """Replace a leaf's values (optimizer steps, finite differences)."""
        if not self.is_leaf:
            raise GraphError("only leaf tensors can be reassigned")
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.shape:
            raise DimensionError(f"assign shape {arr.shape} != {self.shape}")
        self.data = _frozen(arr)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 1:
        return grad.reshape(-1, shape[0]).sum(axis=0)
    return np.full(shape, grad.sum()) if shape == () else grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    for big, small in ((a, b), (b, a)):
        if small.data.ndim == 1 and big.data.ndim >= 1 and big.shape[-1] == small.shape[0]:
            return
        if small.data.ndim == 0:
            return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return Tensor._result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) == 1:
        known = int(np.prod([s for s in shape if s != -1]))
        if known and a.size % known == 0:
            shape = tuple(a.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.array(out), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tensors, backward)


def tsum(a: Tensor) -> Tensor:
    return Tensor._result(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, g.item()),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return Tensor._result(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, g.item() / n),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < max(x.data.ndim, 1):
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis; no affine parameters."""
    if x.data.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("layer_norm needs a trailing channel axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return Tensor._result(y, (x,), backward)


def silu(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    y = z * sig

    def backward(g):
        return (g * (sig * (1.0 + z * (1.0 - sig))),)

    return Tensor._result(y, (x,), backward)


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    # (C, H, W, k, k) -> (H*W, C*k*k)
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, -1)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Same-size cross-correlation of a C×H×W map with a C'×C×k×k kernel."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d expects C×H×W and C'×C×k×k, got {x.shape}, {kernel.shape}")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {k}×{k2}")
    if c_in != x.shape[0]:
        raise DimensionError(f"conv2d: kernel expects {c_in} channels, input has {x.shape[0]}")
    pad = (k - 1) // 2
    if padding is not None and padding != pad:
        raise ValueError(f"padding must be {pad} for kernel size {k}")
    c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, h, w)
    kmat = kernel.data.reshape(c_out, -1)
    out = kmat @ cols.T
    if bias is not None:
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None]
    out = out.reshape(c_out, h, w)

    def backward(g):
        g2 = g.reshape(c_out, h * w)
        dk = (g2 @ cols).reshape(kernel.shape)
        dcols = (g2.T @ kmat).reshape(h, w, c, k, k)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w] += dcols[:, :, :, i, j].transpose(2, 0, 1)
        dx = dxp[:, pad:pad + h, pad:pad + w]
        grads = [dx, dk]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._result(out, parents, backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    The graph is consumed: calling again on the same loss raises GraphError.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by an earlier backward call")
    if not loss.requires_grad:
        raise GraphError("loss is detached: no operand requires grad")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else np.asarray(pg, dtype=np.float64)
        node._backward = None
        node._parents = ()
        node._consumed = True


def clip_grad_norm(params: Iterable[Tensor], max_norm: float = 0.99) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm.

    Returns the factor applied (1.0 when no clipping happened).
    """
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params)))
    if total <= max_norm or total == 0.0:
        return 1.0
    factor = max_norm / total
    for p in params:
        p.grad = p.grad * factor
    return factor
