"""Few-step encoder-based inversion and disentangled text-guided editing
on a procedurally generated shapes world."""

__version__ = "0.1.0"
