from __future__ import annotations


class SubtaskLabError(Exception):
    """Base class for every error raised by subtasklab."""
