"""Closed-loop communication-and-control co-design simulator for cellular-connected UAVs."""

__version__ = "0.1.0"
