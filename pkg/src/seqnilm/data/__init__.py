"""Channel file ingestion, alignment, windowing, splits and synthetic households."""

from .align import AlignedHouse, align_house, resample_align, resample_mains
from .households import Household, find_household_dirs, read_household, write_household
from .series import PowerSeries, parse_channel_file, write_channel_file
from .synth import ApplianceProfile, SynthSpec, default_spec, load_synth_spec, synth_generate
from .windows import (
    SplitSpec,
    Window,
    WindowBatch,
    denormalize,
    fit_norm_stats,
    make_windows,
    normalize,
    split_seen_unseen,
    stack_windows,
    tail_ranges,
)

__all__ = [
    "AlignedHouse", "ApplianceProfile", "Household", "PowerSeries", "SplitSpec", "SynthSpec",
    "Window", "WindowBatch", "align_house", "default_spec", "denormalize", "find_household_dirs",
    "fit_norm_stats", "load_synth_spec", "make_windows", "normalize", "parse_channel_file",
    "read_household", "resample_align", "resample_mains", "split_seen_unseen", "stack_windows",
    "synth_generate", "tail_ranges", "write_channel_file", "write_household",
]
