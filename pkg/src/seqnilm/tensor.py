"""Minimal dense tensor with reverse-mode automatic differentiation.

Only the operations the disaggregation network needs are provided. Every op
records its inputs and a derivative rule on the output tensor; calling
``backward`` on a scalar walks that tape in reverse topological order.

Ops act on the trailing axes, so a leading batch axis passes through all of
them unchanged. Apart from that there is no broadcasting: elementwise
operands must have equal shapes, except ``scale`` (scalar) and ``add_bias``
(vector over the last axis).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """n-dimensional array of reals with an optional gradient.

    ``data`` is a C-ordered numpy array; ``grad`` (when populated) has the same
    shape. Non-leaf tensors carry ``_op``, ``_parents`` and ``_backward``, which
    together form one tape node.
    """

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], tuple]] = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: tuple, backward) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data)
        out.data = data if data.flags.c_contiguous else data.copy(order="C")
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._op = op
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes. ``b`` is either a plain matrix shared
    across the batch, or has the same leading axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ {a.shape} vs {b.shape}")
    shared_b = b.ndim == 2

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if shared_b:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), _bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b a vector over x's last axis."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return Tensor._from_op(x.data + b.data, "add_bias", (x, b), lambda g: (g, g.sum(axis=lead)))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add_bias(matmul(x, w), b)


# -- elementwise ----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _same_shape(a, b, "mul")
    return Tensor._from_op(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(x.data * x.dtype.type(c), "scale", (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * pos,))


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = sigmoid_np(x.data)
    return Tensor._from_op(y, "sigmoid", (x,), lambda g: (g * y * (1 - y),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    t = np.tanh(_GELU_C * (v + _GELU_A * v**3))
    y = 0.5 * v * (1 + t)

    def _bw(g):
        dt = (1 - t * t) * _GELU_C * (1 + 3 * _GELU_A * v * v)
        return (g * (0.5 * (1 + t) + 0.5 * v * dt),)

    return Tensor._from_op(y, "gelu", (x,), _bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the caller decides whether training mode is on."""
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return Tensor._from_op(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# -- reductions and normalisation ---------------------------------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor._from_op(
        np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.size)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax: needs a non-empty last axis, got {x.shape}")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, "softmax", (x,), _bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gamma.shape}/{beta.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def _bw(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(xhat * gamma.data + beta.data, "layer_norm", (x, gamma, beta), _bw)


# -- shape manipulation ---------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(x.data, axes), "transpose", (x,),
                           lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    axis = axis % xs[0].ndim
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(
            t.shape[i] != xs[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    cuts = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return Tensor._from_op(np.concatenate([t.data for t in xs], axis=axis), "concat", xs,
                           lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- sequence ops -----------------------------------------------------------------


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution with zero padding that keeps the sequence length.

    x is (..., L, c_in), kernel is (k, c_in, c_out) with k odd.
    """
    k, c_in, c_out = kernel.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same: kernel size must be odd, got {k}")
    if x.shape[-1] != c_in or bias.shape != (c_out,):
        raise ShapeError(f"conv1d_same: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    p = (k - 1) // 2
    L = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (0, 0)]
    xp = np.pad(x.data, pad)
    # cols[..., t, c, j] = xp[..., t + j, c]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-2)
    out = np.einsum("...tcj,jco->...to", cols, kernel.data, optimize=True) + bias.data
    lead = tuple(range(x.ndim - 1))

    def _bw(g):
        gk = np.einsum("...tcj,...to->jco", cols, g, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j:j + L, :] += g @ kernel.data[j].T
        return gxp[..., p:p + L, :], gk, g.sum(axis=lead)

    return Tensor._from_op(out, "conv1d_same", (x, kernel, bias), _bw)


def _segments(L: int, s: int):
    starts = np.arange(0, L, s)
    counts = np.minimum(starts + s, L) - starts
    return starts, counts


def avg_pool1d(x: Tensor, scale: int) -> Tensor:
    """Mean over consecutive segments of ``scale`` rows (axis -2).

    A trailing partial segment is averaged over the rows it actually has.
    """
    if int(scale) != scale or scale < 1:
        raise ConfigError(f"avg_pool1d: scale must be a positive integer, got {scale}")
    L = x.shape[-2]
    starts, counts = _segments(L, scale)
    c = counts.reshape(-1, 1).astype(x.dtype)
    y = np.add.reduceat(x.data, starts, axis=-2) / c

    def _bw(g):
        return (np.repeat(g / c, counts, axis=-2),)

    return Tensor._from_op(y, "avg_pool1d", (x,), _bw)


def upsample_nearest(x: Tensor, target_len: int) -> Tensor:
    """Row i of the output copies input row floor(i * m / target_len)."""
    m = x.shape[-2]
    if m < 1 or target_len < 1:
        raise ShapeError(f"upsample_nearest: cannot map {m} rows to {target_len}")
    idx = (np.arange(target_len) * m) // target_len
    uniq, first = np.unique(idx, return_index=True)

    def _bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., uniq, :] = np.add.reduceat(g, first, axis=-2)
        return (gx,)

    return Tensor._from_op(x.data[..., idx, :], "upsample_nearest", (x,), _bw)


# -- losses ---------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy from logits; targets are constants."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError(f"bce_with_logits: logits {z.shape} vs targets {y.shape}")
    out = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return Tensor._from_op(out, "bce_with_logits", (logits,), lambda g: (g * (sigmoid_np(z) - y),))


# -- backward pass and gradient checking ------------------------------------------


def _topo_order(root: Tensor) -> list:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf tensor that requires it.

    Leaf gradients accumulate across calls; intermediate gradients are kept
    only for the duration of the pass.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``f`` is evaluated on ``x`` itself, so it may also close over ``x`` as a
    model parameter. x.data is perturbed in place and restored.
    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    backward(f(x))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = was

    flat = x.data.reshape(-1)
    numeric = np.empty(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x).data)
        flat[i] = orig - eps
        lo = float(f(x).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    a = analytic.reshape(-1)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a))))
