"""AF burden estimation from RR interval time series."""

__version__ = "0.1.0"
