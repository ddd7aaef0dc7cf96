"""Driving-safety evaluation harness for attacked 3D detection."""

__version__ = "0.1.0"
