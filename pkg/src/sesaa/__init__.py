"""Simulation of class-based versus race-based admissions preferences across law-school tiers."""

__version__ = "0.1.0"
