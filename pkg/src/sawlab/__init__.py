"""Self-avoiding walk and random walk two-point functions on Z^d and the torus."""

__version__ = "0.1.0"
