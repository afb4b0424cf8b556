"""Markovian approximations of weakly coupled open quantum systems."""
__version__ = "0.1.0"
