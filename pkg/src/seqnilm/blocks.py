"""Attention, residual encoder block, temporal pyramid pooling, positional table."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class _Params:
    """Mixin: iterate (name, Tensor) pairs over dataclass fields, recursing."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                yield prefix + f.name, value
            elif isinstance(value, _Params):
                yield from value.named_parameters(f"{prefix}{f.name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        yield f"{prefix}{f.name}.{i}", item
                    elif isinstance(item, _Params):
                        yield from item.named_parameters(f"{prefix}{f.name}.{i}.")


@dataclass
class AttentionParams(_Params):
    """Projections for multi-head self-attention.

    Per-head query/key/value matrices (d_model x d_head) are stored side by
    side: head ``h`` owns columns ``h*d_head:(h+1)*d_head`` of ``w_q``, ``w_k``
    and ``w_v``.
    """

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % self.n_heads:
            raise ConfigError(f"d_model={d} is not divisible by n_heads={self.n_heads}")


@dataclass
class BlockParams(_Params):
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor


@dataclass
class PyramidParams(_Params):
    proj_w: List[Tensor]
    proj_b: List[Tensor]
    fuse_w: Tensor
    fuse_b: Tensor
    scales: Tuple[int, ...]

    def __post_init__(self):
        validate_scales(self.scales)
        if len(self.proj_w) != len(self.scales):
            raise ConfigError("one projection per pyramid scale is required")


def validate_scales(scales: Sequence[int]) -> None:
    if not scales:
        raise ConfigError("pyramid scales must not be empty")
    if any(int(s) != s for s in scales) or scales[0] < 1:
        raise ConfigError(f"pyramid scales must be positive integers, got {list(scales)}")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ConfigError(f"pyramid scales must be strictly increasing, got {list(scales)}")


def branch_widths(d_model: int, n_branches: int) -> List[int]:
    """Split d_model across pyramid branches; any remainder goes to the first ones."""
    base, extra = divmod(d_model, n_branches)
    if base == 0:
        raise ConfigError(f"d_model={d_model} is too small for {n_branches} pyramid scales")
    return [base + (1 if i < extra else 0) for i in range(n_branches)]


# -- initialisation -------------------------------------------------------------


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _const(value, shape, dtype):
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)


def init_attention(rng, d_model, n_heads, dtype=np.float32, zero_out=True) -> AttentionParams:
    z = lambda *s: _const(0.0, s, dtype)  # noqa: E731
    u = lambda: _uniform(rng, d_model, (d_model, d_model), dtype)  # noqa: E731
    return AttentionParams(
        w_q=u(), b_q=z(d_model), w_k=u(), b_k=z(d_model), w_v=u(), b_v=z(d_model),
        w_o=z(d_model, d_model) if zero_out else u(), b_o=z(d_model), n_heads=n_heads,
    )


def init_block(rng, d_model, n_heads, d_ff, dtype=np.float32, zero_out=True) -> BlockParams:
    attn = init_attention(rng, d_model, n_heads, dtype, zero_out)
    return BlockParams(
        attn=attn,
        ln1_g=_const(1.0, (d_model,), dtype), ln1_b=_const(0.0, (d_model,), dtype),
        ln2_g=_const(1.0, (d_model,), dtype), ln2_b=_const(0.0, (d_model,), dtype),
        ff_w1=_uniform(rng, d_model, (d_model, d_ff), dtype), ff_b1=_const(0.0, (d_ff,), dtype),
        ff_w2=_const(0.0, (d_ff, d_model), dtype) if zero_out else _uniform(rng, d_ff, (d_ff, d_model), dtype),
        ff_b2=_const(0.0, (d_model,), dtype),
    )


def init_pyramid(rng, d_model, scales, dtype=np.float32) -> PyramidParams:
    scales = tuple(int(s) for s in scales)
    validate_scales(scales)
    widths = branch_widths(d_model, len(scales))
    return PyramidParams(
        proj_w=[_uniform(rng, d_model, (d_model, w), dtype) for w in widths],
        proj_b=[_const(0.0, (w,), dtype) for w in widths],
        fuse_w=_uniform(rng, 2 * d_model, (2 * d_model, d_model), dtype),
        fuse_b=_const(0.0, (d_model,), dtype),
        scales=scales,
    )


# -- forward maps -----------------------------------------------------------------


def sinusoidal_pe(L: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Fixed sine/cosine position table of shape (L, d_model)."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    pos = np.arange(L, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((L, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe.astype(dtype)


def multi_head_attention(x: Tensor, p: AttentionParams, return_weights: bool = False):
    """Unmasked scaled dot-product self-attention over the rows of ``x``.

    x is (L, d_model) or (B, L, d_model). With ``return_weights`` the per-head
    attention matrices (..., h, L, L) come back as a numpy array as well.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    B, L, d = x.shape
    h = p.n_heads
    if d % h:
        raise ConfigError(f"d_model={d} is not divisible by n_heads={h}")
    dh = d // h

    def heads(w, b):
        y = T.reshape(T.linear(x, w, b), (B, L, h, dh))
        return T.transpose(y, (0, 2, 1, 3))

    q, k, v = heads(p.w_q, p.b_q), heads(p.w_k, p.b_k), heads(p.w_v, p.b_v)
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = T.softmax(scores)
    ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (B, L, d))
    out = T.linear(ctx, p.w_o, p.b_o)
    if squeeze:
        out = T.reshape(out, (L, d))
    if return_weights:
        w = weights.data[0] if squeeze else weights.data
        return out, w
    return out


def transformer_block(
    x: Tensor,
    p: BlockParams,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Pre-norm encoder block: y = x + Attn(LN(x)); out = y + FFN(LN(y))."""
    drop = (lambda t: T.dropout(t, dropout, rng)) if (rng is not None and dropout > 0) else (lambda t: t)
    a = multi_head_attention(T.layer_norm(x, p.ln1_g, p.ln1_b), p.attn)
    y = T.add(x, drop(a))
    hdn = T.gelu(T.linear(T.layer_norm(y, p.ln2_g, p.ln2_b), p.ff_w1, p.ff_b1))
    return T.add(y, drop(T.linear(hdn, p.ff_w2, p.ff_b2)))


def temporal_pyramid_pool(x: Tensor, p: PyramidParams) -> Tensor:
    """Multi-scale average pooling fused back to per-timestep features.

    Each scale pools x, projects to its branch width and is upsampled back to
    the input length; the branches and x are concatenated and fused to d_model.
    """
    L = x.shape[-2]
    branches = [
        T.upsample_nearest(T.linear(T.avg_pool1d(x, s), w, b), L)
        for s, w, b in zip(p.scales, p.proj_w, p.proj_b)
    ]
    return T.linear(T.concat(branches + [x], axis=-1), p.fuse_w, p.fuse_b)
