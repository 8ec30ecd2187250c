"""Corridor-based trajectory optimization and closed-loop control for a truck-trailer vehicle."""

__version__ = "0.1.0"
