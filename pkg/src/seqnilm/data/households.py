"""Household directories: a key=value manifest naming channel files.

A household directory holds channel files plus ``manifest.txt``::

    house = 1
    mains = mains.dat
    fridge = fridge.dat
    dish_washer = dish_washer.dat

Keys ``house``, ``period``, ``seed``, ``days`` and ``source`` are metadata;
every other key except ``mains`` names an appliance. A UK-DALE style
``labels.dat`` (``<channel> <label>`` per line, ``aggregate`` for mains) is
accepted when no manifest exists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

from ..errors import DataError
from .series import PowerSeries, parse_channel_file, write_channel_file

MANIFEST = "manifest.txt"
META_KEYS = {"house", "period", "seed", "days", "source"}


@dataclass
class Household:
    house: str
    mains: PowerSeries
    appliances: Dict[str, PowerSeries]
    meta: Dict[str, str] = field(default_factory=dict)


def read_manifest(path) -> Dict[str, str]:
    out = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{line_no}: expected key = value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def write_manifest(path, entries: Mapping[str, object]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))


def _labels_manifest(directory: Path) -> Dict[str, str]:
    entries = {}
    for line in (directory / "labels.dat").read_text().splitlines():
        parts = line.split()
        if len(parts) < 2:
            continue
        chan, label = parts[0], parts[1]
        key = "mains" if label == "aggregate" else label
        entries.setdefault(key, f"channel_{chan}.dat")
    m = re.search(r"(\d+)$", directory.name)
    entries.setdefault("house", m.group(1) if m else directory.name)
    return entries


def read_household(
    directory,
    appliances: Optional[Iterable[str]] = None,
    aliases: Optional[Mapping[str, List[str]]] = None,
    period: float = 6.0,
) -> Household:
    """Load mains and the requested appliance channels of one house.

    ``aliases`` maps a configured appliance name to alternative manifest keys
    (e.g. ``dish_washer -> [dishwasher]``). Appliances the house lacks are
    simply absent from the result.
    """
    directory = Path(directory)
    if (directory / MANIFEST).exists():
        entries = read_manifest(directory / MANIFEST)
    elif (directory / "labels.dat").exists():
        entries = _labels_manifest(directory)
    else:
        raise DataError(f"{directory}: no {MANIFEST} or labels.dat")
    if "mains" not in entries:
        raise DataError(f"{directory}: manifest has no mains channel")
    house = entries.get("house", directory.name)
    mains = parse_channel_file(directory / entries["mains"], "mains", period)
    names = [k for k in entries if k not in META_KEYS and k != "mains"]
    if appliances is not None:
        wanted = {}
        for name in appliances:
            for key in [name] + list((aliases or {}).get(name, [])):
                if key in entries:
                    wanted[name] = key
                    break
    else:
        wanted = {n: n for n in names}
    apps = {
        name: parse_channel_file(directory / entries[key], name, period)
        for name, key in wanted.items()
    }
    meta = {k: v for k, v in entries.items() if k in META_KEYS}
    return Household(str(house), mains, apps, meta)


def find_household_dirs(data_dir) -> List[Path]:
    data_dir = Path(data_dir)
    if (data_dir / MANIFEST).exists() or (data_dir / "labels.dat").exists():
        return [data_dir]
    return sorted(
        p for p in data_dir.iterdir()
        if p.is_dir() and ((p / MANIFEST).exists() or (p / "labels.dat").exists())
    )


def write_household(directory, house: str, series: Mapping[str, PowerSeries], meta=None) -> List[Path]:
    """Write one channel file per series plus the manifest; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    entries = {"house": house}
    entries.update(meta or {})
    for name, s in series.items():
        fname = f"{name}.dat"
        write_channel_file(directory / fname, s)
        entries[name] = fname
        written.append(directory / fname)
    write_manifest(directory / MANIFEST, entries)
    written.append(directory / MANIFEST)
    return written
