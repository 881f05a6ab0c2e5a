"""Desk-scale offline-to-online cooperative multi-agent RL laboratory."""

__version__ = "0.1.0"
