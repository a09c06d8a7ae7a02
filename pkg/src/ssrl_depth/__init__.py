"""Domain-invariant depth estimation with a self-supervised Siamese decoder stage."""

__version__ = "0.1.0"
