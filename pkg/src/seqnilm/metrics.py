"""Timestep-level classification metrics and energy regression metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ContractError, MetricError

COLUMNS = ("F1", "Precision", "Recall", "Acc", "MCC", "MAE", "SAE")
ZERO_DIV_NOTE = "Metrics with a 0/0 denominator are reported as 0."


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    mcc: float


def _masked(a, b, mask, what):
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"{what}: length mismatch {a.shape[0]} vs {b.shape[0]}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.shape != a.shape:
            raise ContractError(f"{what}: mask length {m.shape[0]} vs {a.shape[0]}")
        a, b = a[m], b[m]
    return a, b


def confusion(pred_states, true_states, mask=None) -> Confusion:
    p, t = _masked(pred_states, true_states, mask, "confusion")
    p, t = p.astype(bool), t.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return Confusion(tp, fp, int(p.size) - tp - fp - fn, fn)


def _div(num, den) -> float:
    return num / den if den else 0.0


def classification_metrics(c: Confusion) -> ClassificationMetrics:
    """Precision, recall, F1, accuracy and MCC; any 0/0 yields 0."""
    tp, fp, tn, fn = c.tp, c.fp, c.tn, c.fn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = _div(tp * tn - fp * fn, math.sqrt(den)) if den else 0.0
    return ClassificationMetrics(
        precision=_div(tp, tp + fp),
        recall=_div(tp, tp + fn),
        f1=_div(2 * tp, 2 * tp + fp + fn),
        accuracy=_div(tp + tn, c.total),
        mcc=min(1.0, max(-1.0, mcc)),
    )


def mae(pred_power, true_power, mask=None) -> float:
    """Mean absolute error in watts."""
    p, t = _masked(pred_power, true_power, mask, "mae")
    if p.size == 0:
        raise ContractError("mae: no timesteps to evaluate")
    return float(np.mean(np.abs(p.astype(np.float64) - t)))


def sae(pred_power, true_power, mask=None) -> float:
    """Signed relative energy error (sum(pred) - sum(true)) / sum(true)."""
    p, t = _masked(pred_power, true_power, mask, "sae")
    true_total = float(np.sum(t, dtype=np.float64))
    if not true_total > 0:
        raise MetricError("sae: true energy is zero, relative error undefined")
    return (float(np.sum(p, dtype=np.float64)) - true_total) / true_total


@dataclass
class ApplianceMetrics:
    name: str
    f1: float
    precision: float
    recall: float
    accuracy: float
    mcc: float
    mae: float
    sae: float
    confusion: Optional[Confusion] = None

    def values(self) -> List[float]:
        return [self.f1, self.precision, self.recall, self.accuracy, self.mcc, self.mae, self.sae]


@dataclass
class MetricsReport:
    rows: List[ApplianceMetrics]
    overall: ApplianceMetrics
    title: str = ""
    notes: List[str] = field(default_factory=lambda: [ZERO_DIV_NOTE])

    def __getitem__(self, name: str) -> ApplianceMetrics:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        header = ["Appliance", *COLUMNS]
        body = [[r.name] + [_fmt(c, v) for c, v in zip(COLUMNS, r.values())]
                for r in self.rows + [self.overall]]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        line = lambda cells: "  ".join(  # noqa: E731
            c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        out = [self.title] if self.title else []
        out += [line(header), "  ".join("-" * w for w in widths)]
        out += [line(b) for b in body]
        out += [""] + self.notes
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["appliance", *COLUMNS])
        for r in self.rows + [self.overall]:
            w.writerow([r.name] + [repr(float(v)) for v in r.values()])
        return buf.getvalue()

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {r.name: dict(zip(COLUMNS, r.values())) for r in self.rows + [self.overall]}


def _fmt(col, v):
    return f"{v:.2f}" if col == "MAE" else f"{v:.3f}"


def build_report(
    names: Sequence[str],
    pred_power,
    true_power,
    pred_states,
    true_states,
    mask=None,
    title: str = "",
) -> MetricsReport:
    """Per-appliance metrics plus unweighted means.

    Power/state arrays are (A, N) or (N, ...,) stacked with the appliance axis
    first; mask is (N,) shared by all appliances.
    """
    if not names:
        raise ContractError("build_report: at least one appliance is required")
    rows = []
    for i, name in enumerate(names):
        try:
            c = confusion(pred_states[i], true_states[i], mask)
            cm = classification_metrics(c)
            rows.append(ApplianceMetrics(
                name, cm.f1, cm.precision, cm.recall, cm.accuracy, cm.mcc,
                mae(pred_power[i], true_power[i], mask), sae(pred_power[i], true_power[i], mask), c,
            ))
        except (ContractError, MetricError) as exc:
            raise type(exc)(f"{name}: {exc}") from exc
    cols = np.array([r.values() for r in rows])
    overall = ApplianceMetrics("overall", *cols.mean(axis=0).tolist())
    return MetricsReport(rows, overall, title)
