"""Declarative experiments: configs, the run DAG, summaries and the umbrella CLI."""

__version__ = "0.1.0"
