"""Classification metrics, evaluation reports and embedding export."""

__version__ = "0.1.0"
