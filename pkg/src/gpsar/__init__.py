"""Localization, trajectory planning and image formation toolkit for drone-borne GPSAR."""

__version__ = "0.1.0"
