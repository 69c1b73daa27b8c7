"""All-in-one image restoration conditioned on a tree-structured degradation representation."""

__version__ = "0.1.0"
