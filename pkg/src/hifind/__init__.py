"""Desk-scale HI source detection in radio spectral cubes."""

__version__ = "0.1.0"
