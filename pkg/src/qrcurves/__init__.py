"""Numerical toolkit for quasiregular curves calibrated by product volume forms."""
__version__ = "0.1.0"
