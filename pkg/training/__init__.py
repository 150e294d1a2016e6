"""Supervised source training, embedding-replication adaptation and transfer baselines."""

__version__ = "0.1.0"
