"""1D tunnelling-time laboratory for ultracold atoms."""

__version__ = "0.1.0"
