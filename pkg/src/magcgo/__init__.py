"""Stability experiments for magnetic Schrödinger inverse boundary problems on the unit cube."""

__version__ = "0.1.0"
