"""Two-sided data marketplace mechanisms."""

__version__ = "0.1.0"
