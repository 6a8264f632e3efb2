"""Put 1 Hz mains and 6 s appliance readings on one grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..errors import ContractError
from .series import PowerSeries

MAX_FILL = 3


@dataclass
class AlignedHouse:
    """Mains and appliance power on a shared regular grid.

    ``appliances`` is (A, N) in watts; ``mask`` marks bins where every
    channel has data. Invalid bins hold 0 W.
    """

    house: str
    timestamps: np.ndarray
    mains: np.ndarray
    appliances: np.ndarray
    names: List[str]
    mask: np.ndarray
    period: float

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    def slice(self, lo: int, hi: int) -> "AlignedHouse":
        return AlignedHouse(self.house, self.timestamps[lo:hi], self.mains[lo:hi],
                            self.appliances[:, lo:hi], self.names, self.mask[lo:hi], self.period)

    def select(self, names: List[str]) -> "AlignedHouse":
        """Reorder/subset appliance rows; names absent from the house raise."""
        missing = [n for n in names if n not in self.names]
        if missing:
            raise ContractError(f"house {self.house} has no channel for {missing}")
        rows = [self.names.index(n) for n in names]
        return AlignedHouse(self.house, self.timestamps, self.mains, self.appliances[rows],
                            list(names), self.mask, self.period)


def make_grid(first: float, last: float, period: float) -> np.ndarray:
    anchor = np.floor(first / period) * period
    n = int(np.floor((last - anchor) / period)) + 1
    return anchor + period * np.arange(max(n, 0), dtype=np.float64)


def bin_mean(series: PowerSeries, grid: np.ndarray, period: float):
    """Mean of samples in [g, g + period) for each grid point g."""
    n = grid.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    idx = np.floor((series.timestamps - grid[0]) / period + 1e-9).astype(np.int64)
    ok = (idx >= 0) & (idx < n)
    sums = np.bincount(idx[ok], weights=series.power[ok], minlength=n)
    counts = np.bincount(idx[ok], minlength=n)
    have = counts > 0
    out = np.zeros(n)
    out[have] = sums[have] / counts[have]
    return out, have


def snap_nearest(series: PowerSeries, grid: np.ndarray, period: float):
    """Nearest sample within period/2 of each grid point (closest wins)."""
    n = grid.shape[0]
    out = np.zeros(n)
    have = np.zeros(n, dtype=bool)
    if n == 0 or series.empty:
        return out, have
    rel = (series.timestamps - grid[0]) / period
    j = np.round(rel).astype(np.int64)
    dist = np.abs(series.timestamps - (grid[0] + j * period))
    ok = (j >= 0) & (j < n) & (dist <= period / 2)
    j, dist, p = j[ok], dist[ok], series.power[ok]
    order = np.lexsort((dist, j))
    j, p = j[order], p[order]
    first = np.append(True, j[1:] != j[:-1])
    out[j[first]] = p[first]
    have[j[first]] = True
    return out, have


def fill_short_gaps(values: np.ndarray, have: np.ndarray, max_gap: int = MAX_FILL):
    """Forward-fill runs of at most ``max_gap`` missing bins that follow a valid bin."""
    values, have = values.copy(), have.copy()
    n = have.shape[0]
    i = 0
    while i < n:
        if have[i]:
            i += 1
            continue
        j = i
        while j < n and not have[j]:
            j += 1
        if i > 0 and j - i <= max_gap:
            values[i:j] = values[i - 1]
            have[i:j] = True
        i = j
    return values, have


def align_house(
    mains: PowerSeries,
    appliances: Dict[str, PowerSeries],
    period: float = 6.0,
    house: str = "1",
) -> AlignedHouse:
    """Bin mains by mean and snap each appliance onto a common ``period`` grid.

    The grid spans the time range all channels share. Disjoint ranges give an
    empty result rather than an error.
    """
    names = list(appliances)
    chans = [mains] + [appliances[n] for n in names]
    if any(c.empty for c in chans):
        raise ContractError("cannot align an empty series")
    first = max(c.timestamps[0] for c in chans)
    last = min(c.timestamps[-1] for c in chans)
    grid = make_grid(first, last, period) if first <= last else np.zeros(0)

    m, m_have = fill_short_gaps(*bin_mean(mains, grid, period))
    valid = m_have.copy()
    rows = []
    for n in names:
        a, a_have = fill_short_gaps(*snap_nearest(appliances[n], grid, period))
        rows.append(a)
        valid &= a_have
    app = np.vstack(rows) if rows else np.zeros((0, grid.shape[0]))
    m = np.where(valid, m, 0.0)
    app = np.where(valid, app, 0.0)
    return AlignedHouse(str(house), grid, m, app, names, valid, period)


def resample_align(mains: PowerSeries, appliance: PowerSeries, period: float = 6.0) -> AlignedHouse:
    """Align one mains/appliance pair; see :func:`align_house`."""
    return align_house(mains, {appliance.name: appliance}, period)


def resample_mains(mains: PowerSeries, period: float = 6.0):
    """Bin a lone mains series onto its own grid. Returns (grid, watts, valid)."""
    if mains.empty:
        raise ContractError("cannot resample an empty series")
    grid = make_grid(mains.timestamps[0], mains.timestamps[-1], period)
    values, have = fill_short_gaps(*bin_mean(mains, grid, period))
    return grid, values, have
