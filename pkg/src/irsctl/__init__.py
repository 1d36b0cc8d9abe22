"""Adaptive limited-feedback control of angle-dependent reflecting surfaces."""

__version__ = "0.1.0"
