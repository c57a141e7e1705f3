"""Learned scene-graph extraction and spatio-temporal risk assessment."""

__version__ = "0.1.0"
