"""Training and evaluation of dense object descriptors on synthetic RGBD scenes."""

__version__ = "0.1.0"
