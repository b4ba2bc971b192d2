"""Pedestrian path networks from street centerlines, refined against class rasters."""

__version__ = "0.1.0"
