"""Fixed-length windows, normalisation and seen/unseen splits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from ..model import NormStats
from .align import AlignedHouse

MAX_INVALID_FRACTION = 0.1


@dataclass
class Window:
    """One aligned slice: mains (L,), targets (A, L), states (A, L), mask (L,).

    States are always derived from raw watts. ``normalized`` tells whether
    mains/targets are in watts or in model units.
    """

    house: str
    start: float
    mains: np.ndarray
    targets: np.ndarray
    states: np.ndarray
    mask: np.ndarray
    normalized: bool = False

    @property
    def length(self) -> int:
        return self.mains.shape[0]


def make_windows(
    aligned: AlignedHouse,
    L: int,
    stride: int,
    on_thresholds: Sequence[float],
) -> List[Window]:
    """Raw windows at offsets 0, stride, 2*stride, ...

    Windows with more than 10% invalid bins are dropped.
    """
    if L < 1 or stride < 1:
        raise ConfigError(f"window length and stride must be >= 1, got L={L}, stride={stride}")
    thr = np.asarray(on_thresholds, dtype=np.float64).reshape(-1, 1)
    if thr.shape[0] != aligned.appliances.shape[0]:
        raise ConfigError("need one on-threshold per appliance")
    n = len(aligned)
    out = []
    if n < L:
        return out
    for off in range(0, n - L + 1, stride):
        mask = aligned.mask[off:off + L]
        if (L - mask.sum()) > MAX_INVALID_FRACTION * L:
            continue
        targets = aligned.appliances[:, off:off + L]
        out.append(Window(
            house=aligned.house,
            start=float(aligned.timestamps[off]),
            mains=aligned.mains[off:off + L].copy(),
            targets=targets.copy(),
            states=(targets >= thr).astype(np.uint8),
            mask=mask.copy(),
        ))
    return out


def fit_norm_stats(windows: Sequence[Window], max_power: Sequence[float]) -> NormStats:
    """Mains mean/std over the valid bins of (raw, training) windows."""
    if not windows:
        raise ConfigError("cannot fit normalisation statistics on zero windows")
    vals = np.concatenate([w.mains[w.mask.astype(bool)] for w in windows])
    if vals.size == 0:
        raise ConfigError("training windows contain no valid mains samples")
    return NormStats(float(vals.mean()), float(vals.std()), tuple(max_power))


def normalize(window: Window, stats: NormStats) -> Window:
    if window.normalized:
        return window
    if not stats.mains_std > 0:
        raise ConfigError("mains std must be positive")
    mp = np.asarray(stats.max_power).reshape(-1, 1)
    return replace(
        window,
        mains=(window.mains - stats.mains_mean) / stats.mains_std,
        targets=np.clip(window.targets / mp, 0.0, 1.0),
        normalized=True,
    )


def denormalize(window: Window, stats: NormStats) -> Window:
    if not window.normalized:
        return window
    mp = np.asarray(stats.max_power).reshape(-1, 1)
    return replace(
        window,
        mains=window.mains * stats.mains_std + stats.mains_mean,
        targets=window.targets * mp,
        normalized=False,
    )


@dataclass
class WindowBatch:
    """Windows stacked into arrays: mains (N, L), targets (N, L, A), states (N, L, A), mask (N, L)."""

    mains: np.ndarray
    targets: np.ndarray
    states: np.ndarray
    mask: np.ndarray
    houses: List[str] = field(default_factory=list)
    starts: np.ndarray = None

    def __len__(self) -> int:
        return self.mains.shape[0]

    def take(self, idx) -> "WindowBatch":
        return WindowBatch(self.mains[idx], self.targets[idx], self.states[idx], self.mask[idx],
                           [self.houses[i] for i in np.atleast_1d(idx)], self.starts[idx])

    def astype(self, dtype) -> "WindowBatch":
        return WindowBatch(self.mains.astype(dtype), self.targets.astype(dtype),
                           self.states.astype(dtype), self.mask.astype(dtype),
                           list(self.houses), self.starts)


def stack_windows(windows: Sequence[Window], n_appliances: Optional[int] = None) -> WindowBatch:
    if not windows:
        A = n_appliances or 0
        return WindowBatch(np.zeros((0, 0)), np.zeros((0, 0, A)), np.zeros((0, 0, A)),
                           np.zeros((0, 0)), [], np.zeros(0))
    return WindowBatch(
        mains=np.stack([w.mains for w in windows]),
        targets=np.stack([w.targets.T for w in windows]),
        states=np.stack([w.states.T for w in windows]).astype(np.float64),
        mask=np.stack([w.mask for w in windows]).astype(np.float64),
        houses=[w.house for w in windows],
        starts=np.array([w.start for w in windows]),
    )


Range = Tuple[float, float]


@dataclass
class SplitSpec:
    """Which houses train, which time ranges of them are held out, which houses are unseen.

    Seen-test ranges are closed intervals of UNIX seconds.
    """

    train_houses: List[str]
    seen_test_ranges: Dict[str, List[Range]] = field(default_factory=dict)
    unseen_houses: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.train_houses = [str(h) for h in self.train_houses]
        self.unseen_houses = [str(h) for h in self.unseen_houses]
        self.seen_test_ranges = {str(k): [tuple(r) for r in v] for k, v in self.seen_test_ranges.items()}

    def validate(self) -> None:
        overlap = set(self.train_houses) & set(self.unseen_houses)
        if overlap:
            raise ConfigError(f"houses {sorted(overlap)} are both training and unseen-test houses")
        stray = set(self.seen_test_ranges) - set(self.train_houses)
        if stray:
            raise ConfigError(f"seen-test ranges given for non-training houses {sorted(stray)}")
        for h, ranges in self.seen_test_ranges.items():
            for lo, hi in ranges:
                if hi < lo:
                    raise ConfigError(f"house {h}: empty seen-test range ({lo}, {hi})")


def tail_ranges(houses: Mapping[str, AlignedHouse], train_houses, fraction: float) -> Dict[str, List[Range]]:
    """Seen-test range covering the final ``fraction`` of each training house's timeline."""
    if not 0 <= fraction < 1:
        raise ConfigError(f"seen-test fraction must lie in [0, 1), got {fraction}")
    out = {}
    for h in train_houses:
        a = houses.get(str(h))
        if a is None or len(a) == 0 or fraction == 0:
            continue
        n = len(a)
        cut = int(round(n * (1 - fraction)))
        if cut < n:
            out[str(h)] = [(float(a.timestamps[cut]), float(a.timestamps[-1]))]
    return out


def _segments(flags: np.ndarray):
    """Yield (lo, hi, flag) for maximal runs of equal values."""
    n = flags.shape[0]
    if n == 0:
        return
    edges = np.flatnonzero(flags[1:] != flags[:-1]) + 1
    bounds = np.concatenate([[0], edges, [n]])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield int(lo), int(hi), bool(flags[lo])


def split_seen_unseen(
    spec: SplitSpec,
    houses: Mapping[str, AlignedHouse],
    L: int,
    on_thresholds: Sequence[float],
    train_stride: Optional[int] = None,
    test_stride: Optional[int] = None,
) -> Dict[str, List[Window]]:
    """Raw train / seen_test / unseen_test windows.

    Training houses are cut at seen-test range boundaries before windowing, so
    no window straddles a boundary and the three sets share no timestep.
    """
    spec.validate()
    train_stride = train_stride or L
    test_stride = test_stride or L
    out = {"train": [], "seen_test": [], "unseen_test": []}
    for h in spec.train_houses:
        a = houses.get(h)
        if a is None:
            continue
        held = np.zeros(len(a), dtype=bool)
        for lo, hi in spec.seen_test_ranges.get(h, []):
            held |= (a.timestamps >= lo) & (a.timestamps <= hi)
        for lo, hi, is_test in _segments(held):
            seg = a.slice(lo, hi)
            if is_test:
                out["seen_test"] += make_windows(seg, L, test_stride, on_thresholds)
            else:
                out["train"] += make_windows(seg, L, train_stride, on_thresholds)
    for h in spec.unseen_houses:
        a = houses.get(h)
        if a is not None:
            out["unseen_test"] += make_windows(a, L, test_stride, on_thresholds)
    return out
