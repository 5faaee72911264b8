"""Shiftable and time-varying control barrier functions with grid certification and filtered simulation."""

__version__ = "0.1.0"
