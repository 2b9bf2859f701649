"""Cycle-level chiplet NoC simulator with Remote Control deadlock avoidance."""

__version__ = "0.1.0"
