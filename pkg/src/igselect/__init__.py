"""Attribution-driven feature selection for MLP regression."""

__version__ = "0.1.0"
