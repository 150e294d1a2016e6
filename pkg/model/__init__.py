"""ConvLSTM activity model: embedder, classifier head and checkpoints."""

__version__ = "0.1.0"
