"""Binary cache of prepared window sets, keyed by a hash of the data settings."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..checkpoint import read_arrays, write_arrays
from ..errors import CheckpointError
from ..model import NormStats
from .windows import Window


def cache_key(settings: dict, files: Iterable[Path] = ()) -> str:
    h = hashlib.sha256(json.dumps(settings, sort_keys=True).encode())
    for f in sorted(Path(p) for p in files):
        st = f.stat()
        h.update(f"{f.name}:{st.st_size}:{st.st_mtime_ns}".encode())
    return h.hexdigest()[:16]


def to_float32(windows: List[Window]) -> List[Window]:
    """Round window arrays through float32, the precision the cache stores."""
    return [
        Window(w.house, w.start, w.mains.astype(np.float32), w.targets.astype(np.float32),
               w.states.astype(np.uint8), w.mask.astype(bool), w.normalized)
        for w in windows
    ]


def save_window_sets(cache_dir, key: str, sets: Dict[str, List[Window]], stats: NormStats) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    arrays, index = {}, {}
    for name, ws in sets.items():
        index[name] = {"houses": [w.house for w in ws], "starts": [w.start for w in ws],
                       "normalized": bool(ws[0].normalized) if ws else True}
        if ws:
            arrays[f"{name}.mains"] = np.stack([w.mains for w in ws])
            arrays[f"{name}.targets"] = np.stack([w.targets for w in ws])
            arrays[f"{name}.states"] = np.stack([w.states for w in ws])
            arrays[f"{name}.mask"] = np.stack([w.mask for w in ws])
    path = cache_dir / f"windows-{key}.json"
    write_arrays(path, arrays, {"kind": "window-cache", "key": key, "norm_stats": stats.to_dict(),
                                "sets": index})
    return path


def load_window_sets(cache_dir, key: str) -> Optional[Tuple[Dict[str, List[Window]], NormStats]]:
    """Cached sets for ``key``, or None when absent or unreadable."""
    path = Path(cache_dir) / f"windows-{key}.json"
    if not path.exists():
        return None
    try:
        doc, arrays = read_arrays(path)
    except CheckpointError:
        return None
    sets = {}
    for name, ent in doc["sets"].items():
        ws = []
        for i, (house, start) in enumerate(zip(ent["houses"], ent["starts"])):
            ws.append(Window(
                house, float(start),
                arrays[f"{name}.mains"][i], arrays[f"{name}.targets"][i],
                arrays[f"{name}.states"][i].astype(np.uint8),
                arrays[f"{name}.mask"][i].astype(bool), ent["normalized"],
            ))
        sets[name] = ws
    return sets, NormStats.from_dict(doc["norm_stats"])
