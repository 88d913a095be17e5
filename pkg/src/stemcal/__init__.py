"""Acoustic priors and prior-guided attention calibration for stem-specific audio editing."""

__version__ = "0.1.0"
