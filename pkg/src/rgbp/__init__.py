"""Polarimetric car-detection toolkit: Stokes math, mosaics, fusion modules, evaluation."""

__version__ = "0.1.0"
