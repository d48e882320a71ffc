"""Uncertainty, calibration, conformal, selective and explanation primitives for plane classifiers."""
