"""Numerical laboratory for circle-invariant approximately Calabi-Yau neck metrics."""

__version__ = "0.1.0"
SCHEMA = "neckforge/1"
