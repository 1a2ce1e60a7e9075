"""Training-free and contrastively refined video summarization on frame features."""

__version__ = "0.1.0"
