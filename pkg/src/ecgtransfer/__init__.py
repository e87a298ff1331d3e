"""Regression-to-classification transfer learning for 8-lead ECG."""

__version__ = "0.1.0"
