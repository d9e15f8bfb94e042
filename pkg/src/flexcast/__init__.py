"""Metamodel-based forecasting and day-ahead control of flexible electric heating fleets."""

__version__ = "0.1.0"
