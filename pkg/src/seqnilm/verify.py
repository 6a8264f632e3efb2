"""Self-check suite: gradient checks for every block plus core invariants."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import tensor as T
from .blocks import (
    init_attention,
    init_block,
    init_pyramid,
    multi_head_attention,
    temporal_pyramid_pool,
    transformer_block,
)
from .metrics import classification_metrics, confusion
from .model import Appliance, Model, ModelConfig, forward, init_model
from .tensor import Tensor, grad_check
from .train import nilm_loss

GRAD_TOL = 1e-4
ROWSUM_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _max_param_error(loss: Callable[[], Tensor], params) -> float:
    return max(grad_check(lambda _p: loss(), p) for p in params)


def _randomize(params, rng, scale=0.5):
    for p in params:
        p.data[...] = rng.normal(scale=scale, size=p.shape)


def tiny_model(seed: int = 0, dtype=np.float64) -> Model:
    """L=8, d=8, 2 heads, 1 layer, scales {1,2}, with every parameter randomised."""
    cfg = ModelConfig(window_len=8, d_model=8, n_heads=2, n_layers=1, d_ff=16, scales=(1, 2),
                      kernel_size=3, dropout=0.0,
                      appliances=(Appliance("a", 100.0, 10.0), Appliance("b", 200.0, 20.0)), seed=seed)
    m = init_model(cfg, dtype=dtype)
    _randomize([p for _, p in m.named_parameters()], np.random.default_rng(seed + 1), 0.3)
    return m


def grad_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def record(name, err):
        out.append(CheckResult(f"grad:{name}", err, GRAD_TOL, err < GRAD_TOL))

    a, b = _t(rng.normal(size=(3, 4))), _t(rng.normal(size=(4, 2)))
    w = _t(rng.normal(size=(3, 2)))
    record("matmul", _max_param_error(lambda: T.sum(T.mul(T.matmul(a, b), w)), [a, b]))

    x = _t(rng.normal(size=(6, 2)))
    k, kb = _t(rng.normal(size=(3, 2, 4))), _t(rng.normal(size=4))
    w = _t(rng.normal(size=(6, 4)))
    record("conv1d_same", _max_param_error(lambda: T.sum(T.mul(T.conv1d_same(x, k, kb), w)), [x, k, kb]))

    x = _t(rng.normal(size=(4, 6)))
    g, bb = _t(rng.normal(size=6)), _t(rng.normal(size=6))
    w = _t(rng.normal(size=(4, 6)))
    record("layer_norm", _max_param_error(lambda: T.sum(T.mul(T.layer_norm(x, g, bb), w)), [x, g, bb]))

    x = _t(rng.normal(size=(5, 3)))
    w = _t(rng.normal(size=(5, 3)))
    record("softmax", _max_param_error(lambda: T.sum(T.mul(T.softmax(x), w)), [x]))
    record("gelu", _max_param_error(lambda: T.sum(T.mul(T.gelu(x), w)), [x]))
    record("sigmoid", _max_param_error(lambda: T.sum(T.mul(T.sigmoid(x), w)), [x]))
    w7 = _t(rng.normal(size=(7, 3)))
    record("pool+upsample",
           _max_param_error(lambda: T.sum(T.mul(T.upsample_nearest(T.avg_pool1d(x, 2), 7), w7)), [x]))

    x = _t(rng.normal(size=(4, 8)))
    ap = init_attention(rng, 8, 2, np.float64, zero_out=False)
    params = [p for _, p in ap.named_parameters()]
    _randomize(params, rng)
    w = _t(rng.normal(size=(4, 8)))
    record("attention", _max_param_error(lambda: T.sum(T.mul(multi_head_attention(x, ap), w)), params + [x]))

    bp = init_block(rng, 8, 2, 16, np.float64, zero_out=False)
    params = [p for _, p in bp.named_parameters()]
    _randomize(params, rng)
    record("transformer_block",
           _max_param_error(lambda: T.sum(T.mul(transformer_block(x, bp), w)), params + [x]))

    x8 = _t(rng.normal(size=(8, 8)))
    w8 = _t(rng.normal(size=(8, 8)))
    pp = init_pyramid(rng, 8, (1, 2), np.float64)
    params = [p for _, p in pp.named_parameters()]
    _randomize(params, rng)
    record("pyramid_pool",
           _max_param_error(lambda: T.sum(T.mul(temporal_pyramid_pool(x8, pp), w8)), params + [x8]))

    m = tiny_model(seed)
    mains = _t(rng.normal(size=(2, 8, 1)))
    tp = rng.random((2, 8, 2))
    ts = (rng.random((2, 8, 2)) > 0.5).astype(float)
    mask = np.ones((2, 8))
    mask[1, 5:] = 0

    def full_loss():
        p, z = forward(m, mains)
        return nilm_loss(p, z, tp, ts, 1.0, mask)

    record("full_model_loss", _max_param_error(full_loss, [p for _, p in m.named_parameters()]))
    return out


def attention_rowsum_check(trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        L = int(rng.integers(1, 33))
        h = int(rng.choice([1, 2, 4]))
        d = h * int(rng.integers(1, 5)) * 2
        ap = init_attention(rng, d, h, np.float64, zero_out=False)
        x = _t(rng.normal(scale=3.0, size=(L, d)))
        _, weights = multi_head_attention(x, ap, return_weights=True)
        if np.any(weights < 0):
            return CheckResult("attention row sums", float("inf"), ROWSUM_TOL, False, "negative weight")
        worst = max(worst, float(np.max(np.abs(weights.sum(axis=-1) - 1.0))))
    return CheckResult("attention row sums", worst, ROWSUM_TOL, worst < ROWSUM_TOL)


def identity_at_init_check(trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        L, d = int(rng.integers(1, 17)), 8
        bp = init_block(rng, d, 2, 16, np.float64, zero_out=True)
        x = _t(rng.normal(scale=2.0, size=(L, d)))
        if not np.array_equal(transformer_block(x, bp).data, x.data):
            mismatches += 1
    return CheckResult("block identity at zero init", float(mismatches), 0.5, mismatches == 0,
                       "count of inputs not reproduced bitwise")


def pooling_invariant_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in (1, 2, 3, 4, 8):
        L = s * int(rng.integers(1, 6))
        x = _t(rng.normal(size=(L, 3)))
        pooled = T.avg_pool1d(x, s).data
        up = T.upsample_nearest(_t(pooled), L).data.reshape(L // s, s, 3)
        worst = max(worst, float(np.max(np.abs(up - pooled[:, None, :]))))
        worst = max(worst, float(np.max(np.abs(pooled - x.data.reshape(L // s, s, 3).mean(axis=1)))))
    return CheckResult("pool/upsample segment means", worst, 1e-12, worst <= 1e-12)


def metric_oracle_check(trials: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 60))
        p = rng.integers(0, 2, n)
        t = rng.integers(0, 2, n)
        tp = sum(1 for a, b in zip(p, t) if a and b)
        fp = sum(1 for a, b in zip(p, t) if a and not b)
        fn = sum(1 for a, b in zip(p, t) if b and not a)
        tn = n - tp - fp - fn
        c = confusion(p, t)
        if (c.tp, c.fp, c.tn, c.fn) != (tp, fp, tn, fn):
            bad += 1
            continue
        cm = classification_metrics(c)
        if not (0 <= cm.precision <= 1 and 0 <= cm.recall <= 1 and 0 <= cm.f1 <= 1
                and 0 <= cm.accuracy <= 1 and -1 <= cm.mcc <= 1):
            bad += 1
    return CheckResult("metric recount + ranges", float(bad), 0.5, bad == 0, "count of mismatching trials")


def run_all(seed: int = 0) -> List[CheckResult]:
    return grad_checks(seed) + [
        attention_rowsum_check(seed=seed),
        identity_at_init_check(seed=seed),
        pooling_invariant_check(seed),
        metric_oracle_check(seed=seed),
    ]


def format_table(results: List[CheckResult], elapsed: float | None = None) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  {'value':>11}  {'limit':>9}  result"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {r.value:11.3e}  {r.threshold:9.1e}  {'PASS' if r.passed else 'FAIL'}")
    grads = [r.value for r in results if r.name.startswith("grad:")]
    if grads:
        lines.append(f"max gradient relative error: {max(grads):.3e}")
    if elapsed is not None:
        lines.append(f"elapsed: {elapsed:.1f}s")
    return "\n".join(lines)


def main_report(seed: int = 0):
    t0 = time.perf_counter()
    results = run_all(seed)
    return results, format_table(results, time.perf_counter() - t0)
