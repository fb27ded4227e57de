"""Multi-scale toolkit for spatial birth-death populations."""

__version__ = "0.1.0"
