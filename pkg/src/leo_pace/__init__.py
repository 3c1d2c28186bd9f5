"""Two-timescale positioning-aided channel estimation for cooperative multi-LEO downlink."""

__version__ = "0.1.0"
