"""Score a model on a window set and produce a metrics report."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data.windows import Window, WindowBatch, stack_windows
from .errors import ContractError
from .metrics import MetricsReport, build_report
from .model import Model, predict


def predict_watts(model: Model, batch: WindowBatch, state_source: str = "head"):
    """Gated, clamped watts and predicted states, each (A, N*L).

    ``state_source="power"`` derives states from predicted watts against the
    on-thresholds instead of the state head (ablation mode).
    """
    if model.norm is None:
        raise ContractError("model has no normalisation statistics")
    power, prob = predict(model, batch.mains)
    max_power = np.asarray(model.norm.max_power)
    watts = np.clip(power.astype(np.float64) * max_power, 0.0, max_power)
    if state_source == "head":
        states = prob > 0.5
    elif state_source == "power":
        thr = np.array([a.on_threshold for a in model.config.appliances])
        states = watts >= thr
    else:
        raise ContractError(f"unknown state source {state_source!r}")
    watts = watts * states
    A = watts.shape[-1]
    return watts.reshape(-1, A).T, states.reshape(-1, A).T


def evaluate(
    model: Model,
    windows: Sequence[Window] | WindowBatch,
    state_source: str = "head",
    title: str = "",
) -> MetricsReport:
    """Metrics over every valid timestep of normalised windows."""
    A = len(model.config.appliances)
    batch = windows if isinstance(windows, WindowBatch) else stack_windows(windows, A)
    if len(batch) == 0:
        raise ContractError("no windows to evaluate")
    pred_w, pred_s = predict_watts(model, batch, state_source)
    max_power = np.asarray(model.norm.max_power)
    true_w = (batch.targets.astype(np.float64) * max_power).reshape(-1, A).T
    true_s = batch.states.reshape(-1, A).T
    mask = batch.mask.reshape(-1).astype(bool)
    return build_report(model.config.appliance_names, pred_w, true_w, pred_s, true_s, mask, title)
