"""subtasklab: learnability of parity and circuits with and without intermediate supervision."""

__all__ = ["__version__"]

__version__ = "0.1.0"
