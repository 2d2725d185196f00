"""Grid-free Hamilton-Jacobi value evaluation by characteristics."""

__version__ = "0.1.0"
