"""From a data directory to normalised train / seen / unseen window sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .config import RunConfig
from .data.align import AlignedHouse, align_house
from .data.cache import cache_key, load_window_sets, save_window_sets, to_float32
from .data.households import find_household_dirs, read_household
from .data.synth import house_seed, load_synth_spec, synth_generate
from .data.windows import SplitSpec, Window, fit_norm_stats, normalize, split_seen_unseen, tail_ranges
from .errors import DataError
from .model import NormStats

logger = logging.getLogger(__name__)

SYNTH_SPEC_NAMES = ("synth.ini", "synthetic.ini")


@dataclass
class WindowSets:
    train: List[Window]
    seen_test: List[Window]
    unseen_test: List[Window]
    stats: NormStats
    split: SplitSpec
    skipped: Dict[str, str] = field(default_factory=dict)
    from_cache: bool = False

    def get(self, scenario: str) -> List[Window]:
        return {"seen": self.seen_test, "unseen": self.unseen_test, "train": self.train}[scenario]


def find_synth_spec(data_dir: Path) -> Optional[Path]:
    for name in SYNTH_SPEC_NAMES:
        if (data_dir / name).is_file():
            return data_dir / name
    return None


def load_houses(data_dir, cfg: RunConfig):
    """Aligned houses keyed by id, plus {house: reason} for houses left out.

    ``data_dir`` holds household directories (or is one), or a synthetic spec
    file that is generated in memory.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    names = cfg.model.appliance_names
    period = cfg.data.period
    raw = {}
    dirs = find_household_dirs(data_dir)
    spec_path = find_synth_spec(data_dir)
    if dirs:
        for d in dirs:
            hh = read_household(d, names, cfg.aliases, period)
            raw[hh.house] = (hh.mains, hh.appliances)
    elif spec_path is not None:
        spec = load_synth_spec(spec_path)
        for i in range(spec.houses):
            series = synth_generate(spec, house_seed(spec.seed, i), spec.days * 86400.0)
            raw[str(i + 1)] = (series.pop("mains"), series)
    else:
        raise DataError(f"{data_dir}: no household directories and no synthetic spec ({', '.join(SYNTH_SPEC_NAMES)})")

    houses, skipped = {}, {}
    for house, (mains, apps) in raw.items():
        missing = [n for n in names if n not in apps or apps[n].empty]
        if missing:
            skipped[house] = f"lacks {', '.join(missing)}"
            logger.warning("house %s skipped: lacks %s", house, ", ".join(missing))
            continue
        if mains.empty:
            skipped[house] = "empty mains"
            continue
        houses[house] = align_house(mains, {n: apps[n] for n in names}, period, house)
    return houses, skipped


def resolve_split(houses: Dict[str, AlignedHouse], cfg: RunConfig) -> SplitSpec:
    """Configured houses restricted to those present; a lone house is used for training."""
    present = set(houses)
    train = [h for h in cfg.data.train_houses if h in present]
    unseen = [h for h in cfg.data.unseen_houses if h in present]
    if not train:
        leftovers = sorted(present - set(unseen))
        if not leftovers:
            raise DataError(f"none of the training houses {list(cfg.data.train_houses)} is available")
        train = leftovers
        logger.warning("configured training houses absent; training on %s", train)
    return SplitSpec(train, tail_ranges(houses, train, cfg.data.seen_fraction), unseen)


def build_window_sets(data_dir, cfg: RunConfig, cache_dir=None, stats: Optional[NormStats] = None) -> WindowSets:
    """Normalised float32 window sets.

    Statistics are fitted on the training windows unless ``stats`` is given
    (evaluation reuses the checkpoint's); the cache is only used when fitting.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    key = None
    if cache_dir is not None and stats is None:
        files = sorted(p for p in data_dir.rglob("*") if p.is_file())
        settings = {"data": cfg.to_dict()["data"], "model": cfg.model.to_dict(), "aliases": cfg.aliases}
        key = cache_key(settings, files)
        hit = load_window_sets(cache_dir, key)
        if hit is not None:
            sets, stats = hit
            houses_train = sorted({w.house for w in sets["train"]})
            split = SplitSpec(houses_train, {}, sorted({w.house for w in sets["unseen_test"]}))
            return WindowSets(sets["train"], sets["seen_test"], sets["unseen_test"], stats, split,
                              from_cache=True)

    houses, skipped = load_houses(data_dir, cfg)
    if not houses:
        raise DataError(f"{data_dir}: no usable house ({skipped})")
    split = resolve_split(houses, cfg)
    L = cfg.model.window_len
    thr = [a.on_threshold for a in cfg.model.appliances]
    raw = split_seen_unseen(split, houses, L, thr,
                            train_stride=cfg.data.train_stride or L, test_stride=cfg.data.test_stride or L)
    if stats is None:
        if not raw["train"]:
            raise DataError(f"no training windows of length {L}; the training houses are too short or too gappy")
        stats = fit_norm_stats(raw["train"], [a.max_power for a in cfg.model.appliances])
    sets = {k: to_float32([normalize(w, stats) for w in v]) for k, v in raw.items()}
    if key is not None:
        save_window_sets(cache_dir, key, sets, stats)
    return WindowSets(sets["train"], sets["seen_test"], sets["unseen_test"], stats, split, skipped)
