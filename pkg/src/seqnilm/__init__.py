"""Sequence-to-sequence transformer disaggregation for non-intrusive load monitoring."""

__version__ = "0.1.0"
