"""Robot-centric probabilistic terrain mapping from coarse range-class images."""

__version__ = "0.1.0"
