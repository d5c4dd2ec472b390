"""Weakly supervised task-oriented dialogue pipeline toolkit."""

__version__ = "0.1.0"
