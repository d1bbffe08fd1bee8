"""Geometric design and verification of dynamically corrected gates."""
__version__ = "0.1.0"
