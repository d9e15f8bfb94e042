"""Gradient-boosted multi-output forecaster."""
