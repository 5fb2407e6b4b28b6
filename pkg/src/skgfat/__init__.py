"""Desk-scale laboratory for self-knowledge guided fast adversarial training."""

__version__ = "0.1.0"
