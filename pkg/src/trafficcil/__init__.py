"""Class-incremental learning for early mobile-traffic classification."""

__version__ = "0.1.0"
