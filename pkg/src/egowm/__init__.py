"""Desk-scale egocentric world model with physics-informed conditioning."""

__version__ = "0.1.0"
