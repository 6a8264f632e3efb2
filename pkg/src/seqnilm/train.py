"""Loss, Adam, and the epoch loop with best-validation checkpointing."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .data.windows import Window, WindowBatch, stack_windows
from .errors import ConfigError, ContractError, DivergenceError
from .model import Model, forward
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 300
    state_weight: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0
    patience: Optional[int] = None
    clip_norm: Optional[float] = 1.0

    def validate(self) -> None:
        bad = []
        if not self.lr > 0:
            bad.append("lr must be > 0")
        if self.batch_size < 1:
            bad.append("batch_size must be >= 1")
        if self.epochs < 1:
            bad.append("epochs must be >= 1")
        if self.state_weight < 0:
            bad.append("state_weight must be >= 0")
        if not 0 < self.val_fraction < 1:
            bad.append("val_fraction must lie in (0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            bad.append("Adam betas must lie in [0, 1) and eps > 0")
        if self.patience is not None and self.patience < 1:
            bad.append("patience must be >= 1 when set")
        if bad:
            raise ConfigError("invalid train config: " + "; ".join(bad))


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class LossLog:
    """Per-epoch train/validation/test loss. test is None when no test set was given."""

    train: List[float] = field(default_factory=list)
    val: List[float] = field(default_factory=list)
    test: List[Optional[float]] = field(default_factory=list)

    def append(self, train, val, test=None):
        self.train.append(float(train))
        self.val.append(float(val))
        self.test.append(None if test is None else float(test))

    def __len__(self) -> int:
        return len(self.train)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation loss (earliest on ties)."""
        return int(np.argmin(self.val)) + 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "test_loss"])
        for i, (a, b, c) in enumerate(zip(self.train, self.val, self.test), start=1):
            w.writerow([i, repr(a), repr(b), "" if c is None else repr(c)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LossLog":
        log = cls()
        for row in csv.DictReader(io.StringIO(text)):
            log.append(float(row["train_loss"]), float(row["val_loss"]),
                       float(row["test_loss"]) if row["test_loss"] else None)
        return log


def nilm_loss(
    pred_power: Tensor,
    state_logits: Tensor,
    target_power,
    target_states,
    state_weight: float = 1.0,
    mask=None,
) -> Tensor:
    """Masked MSE on normalised power plus ``state_weight`` times masked BCE on states.

    All tensors are (..., L, A); ``mask`` is (..., L) and defaults to all valid.
    """
    tp = np.asarray(target_power, dtype=pred_power.dtype)
    ts = np.asarray(target_states, dtype=pred_power.dtype)
    if not (pred_power.shape == state_logits.shape == tp.shape == ts.shape):
        raise ContractError(
            f"nilm_loss: shape mismatch power {pred_power.shape}, logits {state_logits.shape}, "
            f"targets {tp.shape}, states {ts.shape}"
        )
    if mask is None:
        w = np.ones(tp.shape, dtype=tp.dtype)
    else:
        m = np.asarray(mask, dtype=tp.dtype)
        if m.shape != tp.shape[:-1]:
            raise ContractError(f"nilm_loss: mask {m.shape} does not match {tp.shape[:-1]}")
        w = np.repeat(m[..., None], tp.shape[-1], axis=-1)
    total = w.sum()
    if total == 0:
        raise ContractError("nilm_loss: every timestep is masked out")
    w = Tensor(w / total)
    diff = T.sub(pred_power, Tensor(tp))
    mse = T.sum(T.mul(T.mul(diff, diff), w))
    bce = T.sum(T.mul(T.bce_with_logits(state_logits, ts), w))
    return T.add(mse, T.scale(bce, state_weight))


def adam_step(params: Dict[str, Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    missing = [n for n, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:5]}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data -= step.astype(p.dtype)


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values()))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params.values():
            p.grad = p.grad * p.dtype.type(factor)
    return norm


def batch_loss(model: Model, batch: WindowBatch, cfg: TrainConfig, train_mode=False, rng=None) -> Tensor:
    x = batch.mains[..., None].astype(model.dtype)
    power, logits = forward(model, Tensor(x), train_mode=train_mode, rng=rng)
    return nilm_loss(power, logits, batch.targets, batch.states, cfg.state_weight, batch.mask)


def evaluate_loss(model: Model, batch: WindowBatch, cfg: TrainConfig, chunk: int = 64) -> float:
    """Mask-weighted mean loss over a window set, in inference mode."""
    total, weight = 0.0, 0.0
    for lo in range(0, len(batch), chunk):
        part = batch.take(np.arange(lo, min(lo + chunk, len(batch))))
        w = float(part.mask.sum())
        if w == 0:
            continue
        total += float(batch_loss(model, part, cfg).data) * w
        weight += w
    return total / weight if weight else float("nan")


def snapshot(model: Model) -> Dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in model.named_parameters()}


def restore(model: Model, snap: Dict[str, np.ndarray]) -> None:
    for n, p in model.named_parameters():
        p.data[...] = snap[n]


def carve_validation(n: int, fraction: float, seed: int):
    """Seeded (train_idx, val_idx) split of n windows."""
    if n < 1:
        raise ContractError("training set is empty")
    if n == 1:
        return np.array([0]), np.array([0])
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(round(fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_loop(
    model: Model,
    windows: Sequence[Window] | WindowBatch,
    cfg: TrainConfig,
    test_windows: Sequence[Window] | WindowBatch | None = None,
    on_epoch: Optional[Callable[[int, LossLog], None]] = None,
):
    """Train ``model`` in place; return (best-validation model copy, LossLog).

    Windows must already be normalised.
    """
    cfg.validate()
    A = len(model.config.appliances)
    data = windows if isinstance(windows, WindowBatch) else stack_windows(windows, A)
    if len(data) == 0:
        raise ContractError("training set is empty")
    data = data.astype(model.dtype)
    test = None
    if test_windows is not None:
        test = test_windows if isinstance(test_windows, WindowBatch) else stack_windows(test_windows, A)
        test = test.astype(model.dtype) if len(test) else None

    tr_idx, val_idx = carve_validation(len(data), cfg.val_fraction, cfg.seed)
    train_set, val_set = data.take(tr_idx), data.take(val_idx)
    rng = np.random.default_rng([cfg.seed, 1])
    drop_rng = np.random.default_rng([cfg.seed, 2])
    params = model.parameters()
    state = AdamState()
    log = LossLog()
    best_val, best_snap, stale = math.inf, snapshot(model), 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        run_total, run_weight = 0.0, 0.0
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_set.take(order[lo:lo + cfg.batch_size])
            if batch.mask.sum() == 0:
                continue
            for p in params.values():
                p.zero_grad()
            loss = batch_loss(model, batch, cfg, train_mode=True, rng=drop_rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            T.backward(loss)
            if cfg.clip_norm:
                clip_grad_norm(params, cfg.clip_norm)
            adam_step(params, state, cfg)
            w = float(batch.mask.sum())
            run_total += value * w
            run_weight += w
        val_loss = evaluate_loss(model, val_set, cfg)
        test_loss = evaluate_loss(model, test, cfg) if test is not None else None
        log.append(run_total / run_weight, val_loss, test_loss)
        for v in (val_loss, test_loss):
            if v is not None and not math.isfinite(v):
                raise DivergenceError(f"non-finite evaluation loss at epoch {epoch}")
        logger.debug("epoch %d train %.6f val %.6f", epoch, log.train[-1], val_loss)
        if on_epoch:
            on_epoch(epoch, log)
        if val_loss < best_val:
            best_val, best_snap, stale = val_loss, snapshot(model), 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break

    best = copy.deepcopy(model)
    restore(best, best_snap)
    return best, log
