"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. Graph recording is skipped when no input requires a
gradient, so inference pays only the numpy cost.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class UnsupportedOperation(TypeError):
    """Raised when a Tensor is fed to code outside the supported op set."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim and 0 in arr.shape:
            raise ValueError("tensor extents must be positive")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # numpy must not silently unwrap a Tensor and drop it from the graph
    __array_priority__ = 1000

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise UnsupportedOperation(f"numpy ufunc {ufunc.__name__!r} is not a differentiable op")

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOperation(f"numpy function {func.__name__!r} is not a differentiable op")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    # ------------------------------------------------------------------
    # operator sugar
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _raise_nonscalar():
    raise ValueError("item() needs a single-element tensor")


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.ndarray, np.generic)):
        return Tensor(x)
    raise UnsupportedOperation(f"cannot use {type(x).__name__} as a tensor operand")


def make_op(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; ``backward(g)`` returns one grad per parent.

    Public so callers can register extra primitives (the gradient checker's
    negative controls use it to build deliberately wrong rules).
    """
    parents = tuple(parents)
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return make_op(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "pow",
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# ----------------------------------------------------------------------
# reductions and shape


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return make_op(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast"
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_op(a.data[index], (a,), backward, "slice")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


# ----------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dimensions")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(a.data @ b.data, (a, b), backward, "matmul")


def logabsdet(a) -> Tensor:
    """log|det A| of a square matrix; gradient is inv(A)^T."""
    a = as_tensor(a)
    sign, value = np.linalg.slogdet(a.data)
    if sign == 0:
        raise np.linalg.LinAlgError("singular matrix")
    return make_op(
        np.asarray(value), (a,), lambda g: (g * np.linalg.inv(a.data).T,), "logabsdet"
    )


def resample(a, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply fixed linear maps along H and W of an NHWC tensor.

    ``rows`` is (H_out, H_in) and ``cols`` is (W_out, W_in); the op is
    ``out[n,i,j,c] = sum_{h,w} rows[i,h] x[n,h,w,c] cols[j,w]``.
    """
    a = as_tensor(a)
    out = np.einsum("ih,nhwc,jw->nijc", rows, a.data, cols, optimize=True)
    return make_op(
        out,
        (a,),
        lambda g: (np.einsum("ih,nijc,jw->nhwc", rows, g, cols, optimize=True),),
        "resample",
    )


# ----------------------------------------------------------------------
# convolution (NHWC, kernel kh x kw x Cin x Cout, stride 1)


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N, Ho, Wo, Cin, kh, kw) view over an already padded input
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))


def _correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw, cin, cout = k.shape
    win = _windows(x, kh, kw)
    n, ho, wo = win.shape[:3]
    cols = win.reshape(n * ho * wo, cin * kh * kw)
    kmat = k.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    return (cols @ kmat).reshape(n, ho, wo, cout)


def conv2d(x, kernel, padding: str = "same") -> Tensor:
    """2-D cross-correlation. Accepts HWC or NHWC input."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 4:
        raise ValueError("kernel must be kh x kw x Cin x Cout")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ValueError(f"channel mismatch: input has {x.shape[-1]}, kernel expects {cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same padding needs odd kernel extents")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = _correlate(xp, kernel.data)

    def backward(g):
        n, ho, wo, _ = g.shape
        win = _windows(xp, kh, kw)
        gk = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2]))  # (Cin, kh, kw, Cout)
        gk = gk.transpose(1, 2, 0, 3)
        flipped = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2)
        gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        gxp = _correlate(gp, flipped)
        gx = gxp[:, ph : ph + x.shape[1], pw : pw + x.shape[2], :]
        return np.ascontiguousarray(gx), gk

    result = make_op(out, (x, kernel), backward, "conv2d")
    return reshape(result, result.shape[1:]) if squeeze else result
