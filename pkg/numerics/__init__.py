"""Dense tensors, reverse-mode differentiation and the RMSprop optimizer."""

__version__ = "0.1.0"
