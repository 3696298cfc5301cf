"""Simulator for model-follow-data training and inference over a knowledge network."""

__version__ = "0.1.0"
