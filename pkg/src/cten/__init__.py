"""Continuous temporal energy networks on a from-scratch float64 autodiff core."""

__version__ = "0.1.0"
