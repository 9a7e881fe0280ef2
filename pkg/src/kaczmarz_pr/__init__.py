"""Online SGD (randomized Kaczmarz) for real phase retrieval and its two-dimensional summary chain."""

__version__ = "0.1.0"
