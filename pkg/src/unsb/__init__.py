"""Adversarial Schrodinger-bridge translation on toy point clouds, with exact Gaussian references."""

__version__ = "0.1.0"
