"""Target-aware corpus selection with multi-granular hashed n-gram features."""

__version__ = "0.1.0"
