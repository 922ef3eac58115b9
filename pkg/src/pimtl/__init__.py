"""Permutation-invariant multi-task reinforcement learning for sequential
resource allocation."""

__version__ = "0.1.0"
