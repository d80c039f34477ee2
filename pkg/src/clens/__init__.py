"""Continual learning over frozen features: per-task subspaces, Gaussian
replay, and adaptive score fusion, with a benchmark harness."""

__version__ = "0.1.0"
