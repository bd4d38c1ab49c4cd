"""Dual-agent reinforcement walking over knowledge graphs."""

__version__ = "0.1.0"
