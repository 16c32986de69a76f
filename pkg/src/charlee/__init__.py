"""CHARLEE: channel-adaptive, reinforcement-learning-based early exiting
for multivariate time series classification.

A policy learns, per sample, at which checkpoints to drop which channel
groups (and when to stop entirely), trading classification accuracy
against input savings under a user-set factor delta.
"""

__version__ = "0.1.0"
