"""Pedestrian road-crossing decisions as reward maximization under noisy vision."""

__version__ = "0.1.0"
