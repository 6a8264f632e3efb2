"""Power series type and the ``<epoch_seconds> <watts>`` channel file format."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError

logger = logging.getLogger(__name__)


@dataclass
class PowerSeries:
    """Timestamped power readings for one channel.

    timestamps are UNIX seconds (strictly increasing), power is watts.
    """

    name: str
    timestamps: np.ndarray
    power: np.ndarray
    period: float = 6.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.timestamps.shape != self.power.shape or self.timestamps.ndim != 1:
            raise ValueError("timestamps and power must be 1-D arrays of equal length")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0


def _parse_line(path, line_no, line):
    parts = line.split()
    if len(parts) < 2:
        raise ParseError(path, line_no, line)
    try:
        t, w = float(parts[0]), float(parts[1])
    except ValueError:
        raise ParseError(path, line_no, line) from None
    if not (np.isfinite(t) and np.isfinite(w)) or w < 0:
        raise ParseError(path, line_no, line)
    return t, w


def parse_channel_file(path, name: str | None = None, period: float = 6.0) -> PowerSeries:
    """Read a channel file with one ``<epoch_seconds> <watts>`` reading per line.

    Extra trailing columns (as in some UK-DALE mains files) are ignored.
    Out-of-order readings are sorted and counted in ``metadata["unsorted"]``;
    duplicate timestamps keep the last reading in file order.
    """
    path = Path(path)
    ts, ws = [], []
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            t, w = _parse_line(path, line_no, line.rstrip("\n"))
            ts.append(t)
            ws.append(w)
    t = np.asarray(ts, dtype=np.float64)
    w = np.asarray(ws, dtype=np.float64)
    unsorted = int(np.sum(np.diff(t) < 0)) if t.size > 1 else 0
    if unsorted:
        logger.warning("%s: %d out-of-order readings, sorting", path, unsorted)
        order = np.argsort(t, kind="stable")
        t, w = t[order], w[order]
    duplicates = 0
    if t.size > 1:
        keep = np.append(t[1:] != t[:-1], True)
        duplicates = int(t.size - keep.sum())
        t, w = t[keep], w[keep]
    return PowerSeries(
        name or path.stem, t, w, period,
        metadata={"source": str(path), "unsorted": unsorted, "duplicates": duplicates},
    )


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def write_channel_file(path, series: PowerSeries, decimals: int = 2) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for t, w in zip(series.timestamps, series.power):
            fh.write(f"{_fmt_time(t)} {w:.{decimals}f}\n")
