"""Calibration-weighted prediction-powered inference (MEC) for semi-supervised means."""
