"""Outcome-model estimation when a binary exposure is underreported."""

__version__ = "0.1.0"
