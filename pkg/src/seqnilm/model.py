"""The sequence-to-sequence disaggregation network and its inference helpers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .blocks import (
    BlockParams,
    PyramidParams,
    init_block,
    init_pyramid,
    sinusoidal_pe,
    temporal_pyramid_pool,
    transformer_block,
    validate_scales,
)
from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class Appliance:
    name: str
    max_power: float
    on_threshold: float


DEFAULT_APPLIANCES = (
    Appliance("fridge", 300.0, 50.0),
    Appliance("dish_washer", 2500.0, 10.0),
    Appliance("washing_machine", 2500.0, 20.0),
)


@dataclass
class NormStats:
    """Mains standardisation and per-appliance scaling, fitted on training data."""

    mains_mean: float
    mains_std: float
    max_power: Tuple[float, ...]

    def __post_init__(self):
        if not self.mains_std > 0:
            raise ConfigError(f"mains std must be positive, got {self.mains_std}")
        if any(not p > 0 for p in self.max_power):
            raise ConfigError(f"max_power entries must be positive, got {self.max_power}")
        self.max_power = tuple(float(p) for p in self.max_power)

    def to_dict(self) -> dict:
        return {"mains_mean": self.mains_mean, "mains_std": self.mains_std,
                "max_power": list(self.max_power)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["mains_mean"]), float(d["mains_std"]), tuple(d["max_power"]))


@dataclass
class ModelConfig:
    window_len: int = 480
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    scales: Tuple[int, ...] = (1, 2, 4, 8)
    kernel_size: int = 5
    dropout: float = 0.1
    appliances: Tuple[Appliance, ...] = DEFAULT_APPLIANCES
    seed: int = 0

    def violations(self) -> List[str]:
        out = []
        if self.window_len < 1:
            out.append("window_len must be >= 1")
        try:
            validate_scales(self.scales)
        except ConfigError as exc:
            out.append(str(exc))
        else:
            if self.window_len < max(self.scales):
                out.append(f"window_len={self.window_len} is shorter than the largest scale {max(self.scales)}")
            if self.d_model % len(self.scales):
                out.append(f"d_model={self.d_model} must be divisible by the number of scales ({len(self.scales)})")
        if self.d_model < 2 or self.d_model % 2:
            out.append(f"d_model={self.d_model} must be even")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            out.append(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.n_layers < 0:
            out.append("n_layers must be >= 0")
        if self.d_ff < 1:
            out.append("d_ff must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            out.append(f"kernel_size={self.kernel_size} must be odd")
        if not 0 <= self.dropout < 1:
            out.append(f"dropout={self.dropout} must lie in [0, 1)")
        if not self.appliances:
            out.append("at least one appliance is required")
        for a in self.appliances:
            if not a.max_power > 0:
                out.append(f"{a.name}: max_power must be > 0")
            if not a.on_threshold >= 0:
                out.append(f"{a.name}: on_threshold must be >= 0")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ConfigError("invalid model config: " + "; ".join(bad))

    @property
    def appliance_names(self) -> List[str]:
        return [a.name for a in self.appliances]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scales"] = tuple(d["scales"])
        d["appliances"] = tuple(Appliance(**a) for a in d["appliances"])
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    embed_w: Tensor
    embed_b: Tensor
    blocks: List[BlockParams]
    pyramid: PyramidParams
    power_w: Tensor
    power_b: Tensor
    state_w: Tensor
    state_b: Tensor
    positional: np.ndarray = field(repr=False, default=None)
    norm: Optional[NormStats] = None

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield "embed_w", self.embed_w
        yield "embed_b", self.embed_b
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"blocks.{i}.")
        yield from self.pyramid.named_parameters("pyramid.")
        yield "power_w", self.power_w
        yield "power_b", self.power_b
        yield "state_w", self.state_w
        yield "state_b", self.state_b

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return int(np.sum([p.size for _, p in self.named_parameters()]))

    @property
    def dtype(self):
        return self.embed_w.dtype


def init_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    """Fan-in scaled uniform weights, zero biases, zero residual-ending projections."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, A, k = cfg.d_model, len(cfg.appliances), cfg.kernel_size
    bound = 1.0 / np.sqrt(k)
    zeros = lambda *s: Tensor(np.zeros(s, dtype=dtype), requires_grad=True)  # noqa: E731
    embed_w = Tensor(rng.uniform(-bound, bound, (k, 1, d)).astype(dtype), requires_grad=True)
    blocks = [init_block(rng, d, cfg.n_heads, cfg.d_ff, dtype) for _ in range(cfg.n_layers)]
    pyramid = init_pyramid(rng, d, cfg.scales, dtype)
    return Model(
        config=cfg, embed_w=embed_w, embed_b=zeros(d), blocks=blocks, pyramid=pyramid,
        power_w=zeros(d, A), power_b=zeros(A), state_w=zeros(d, A), state_b=zeros(A),
        positional=sinusoidal_pe(cfg.window_len, d, dtype),
    )


def forward(
    m: Model,
    mains,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """Run the network on normalised mains of shape (L, 1) or (B, L, 1).

    Returns (power, state_logits), each (..., L, A). Power is sigmoid-bounded
    and expressed as a fraction of each appliance's max_power.
    """
    cfg = m.config
    x = mains if isinstance(mains, Tensor) else Tensor(np.asarray(mains, dtype=m.dtype))
    if x.ndim == 1:
        x = T.reshape(x, (x.shape[0], 1))
    if x.ndim not in (2, 3) or x.shape[-1] != 1:
        raise ContractError(f"mains must have shape (L, 1) or (B, L, 1), got {x.shape}")
    if x.shape[-2] != cfg.window_len:
        raise ContractError(f"mains window has length {x.shape[-2]}, model expects {cfg.window_len}")
    drop = train_mode and cfg.dropout > 0
    if drop and rng is None:
        raise ContractError("training-mode forward with dropout needs an rng")

    h = T.conv1d_same(x, m.embed_w, m.embed_b)
    h = T.add(h, Tensor(np.broadcast_to(m.positional, h.shape)))
    if drop:
        h = T.dropout(h, cfg.dropout, rng)
    for block in m.blocks:
        h = transformer_block(h, block, cfg.dropout if drop else 0.0, rng if drop else None)
    h = temporal_pyramid_pool(h, m.pyramid)
    power = T.sigmoid(T.linear(h, m.power_w, m.power_b))
    logits = T.linear(h, m.state_w, m.state_b)
    return power, logits


def predict(m: Model, mains_norm: np.ndarray, batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Inference over a stack of normalised windows (N, L).

    Returns normalised power and on-probability, both (N, L, A).
    """
    mains_norm = np.asarray(mains_norm, dtype=m.dtype)
    n = mains_norm.shape[0]
    A = len(m.config.appliances)
    power = np.empty((n, m.config.window_len, A), dtype=m.dtype)
    prob = np.empty_like(power)
    for lo in range(0, n, batch_size):
        chunk = mains_norm[lo:lo + batch_size, :, None]
        p, z = forward(m, Tensor(chunk))
        power[lo:lo + batch_size] = p.data
        prob[lo:lo + batch_size] = T.sigmoid_np(z.data)
    return power, prob


def window_offsets(n: int, L: int, stride: int) -> List[int]:
    """Offsets at ``stride`` spacing, plus a final window flush with the end."""
    if n < L:
        return []
    offs = list(range(0, n - L + 1, stride))
    if offs[-1] != n - L:
        offs.append(n - L)
    return offs


def overlap_average(preds: Sequence[np.ndarray], offsets: Sequence[int], n: int) -> np.ndarray:
    """Average per-window predictions (each (L, ...)) onto a length-n timeline."""
    first = np.asarray(preds[0])
    total = np.zeros((n,) + first.shape[1:], dtype=np.float64)
    count = np.zeros(n, dtype=np.float64)
    for p, o in zip(preds, offsets):
        p = np.asarray(p)
        total[o:o + len(p)] += p
        count[o:o + len(p)] += 1
    if np.any(count == 0):
        raise ContractError("some timesteps are not covered by any window")
    return total / count.reshape((n,) + (1,) * (total.ndim - 1))


def disaggregate_array(
    m: Model,
    mains_watts: np.ndarray,
    stride: Optional[int] = None,
    batch_size: int = 64,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-appliance watts and on/off states, each (A, N), for a mains trace on the model grid."""
    cfg = m.config
    if m.norm is None:
        raise ContractError("model has no normalisation statistics; train or load it first")
    L = cfg.window_len
    mains_watts = np.asarray(mains_watts, dtype=np.float64)
    n = mains_watts.shape[0]
    if n < L:
        raise ContractError(
            f"series has {n} samples but the model window is {L}; pad the series to at least {L} samples"
        )
    stride = stride or max(1, L // 2)
    norm = (mains_watts - m.norm.mains_mean) / m.norm.mains_std
    offs = window_offsets(n, L, stride)
    stack = np.stack([norm[o:o + L] for o in offs])
    power, prob = predict(m, stack, batch_size)
    max_power = np.asarray(m.norm.max_power)
    watts = overlap_average(list(power.astype(np.float64) * max_power), offs, n)
    on_prob = overlap_average(list(prob.astype(np.float64)), offs, n)
    states = on_prob > 0.5
    watts = np.clip(watts, 0.0, max_power) * states
    return watts.T, states.T


def disaggregate(m: Model, series, stride: Optional[int] = None) -> Dict[str, "PowerSeries"]:
    """Split a mains PowerSeries (already on the model period) into appliance traces."""
    from .data.series import PowerSeries

    watts, _ = disaggregate_array(m, series.power, stride)
    return {
        a.name: PowerSeries(a.name, series.timestamps.copy(), watts[i], series.period)
        for i, a in enumerate(m.config.appliances)
    }


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    d, f, A, k = cfg.d_model, cfg.d_ff, len(cfg.appliances), cfg.kernel_size
    embed = k * d + d
    attn = 4 * (d * d + d)
    block = attn + 4 * d + (d * f + f) + (f * d + d)
    pyramid = (d * d + d) + (2 * d * d + d)
    heads = 2 * (d * A + A)
    return embed + cfg.n_layers * block + pyramid + heads
