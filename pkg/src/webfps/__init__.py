"""Energy-aware interactive web rendering on simulated big.LITTLE platforms."""

__version__ = "0.1.0"
