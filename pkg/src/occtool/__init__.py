"""Occupancy measurement, refinement, evaluation and occupant-centric HVAC simulation."""

__version__ = "0.1.0"
