"""Acoustic keyword spotting with lattice-free sequence training."""

__version__ = "1.0.0"
