"""Desk-scale simulator and control stack for a chain-driven QDD quadruped."""

__version__ = "0.1.0"
