"""Contact-rich planar pushing planner driven by the spectrum of the inverse dynamics."""

__version__ = "0.1.0"
