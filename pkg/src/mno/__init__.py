"""Martingale Neural Operator: drift plus low-rank Gaussian residual over function space."""

__version__ = "0.1.0"
