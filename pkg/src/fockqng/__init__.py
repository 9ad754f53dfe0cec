"""Fock-state non-Gaussianity certification, displacement sensing and state preparation."""

__version__ = "0.1.0"
