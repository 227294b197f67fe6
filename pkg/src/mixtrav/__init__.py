"""Hybrid structural/textual retrieval over text-rich graph knowledge bases."""

__version__ = "0.1.0"
