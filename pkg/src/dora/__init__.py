"""Dynamic low-rank adaptation on a toy transformer encoder."""

__version__ = "0.1.0"
