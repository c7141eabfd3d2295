"""Tracking, monitoring, scoring and guided optimisation for fire-simulation campaigns."""

__version__ = "0.1.0"
