"""Dataset descriptors, raw-file harmonization, paired windows and archives."""

__version__ = "0.1.0"
