"""Lane-change interactive pattern mining and risk ranking."""

__version__ = "0.1.0"
