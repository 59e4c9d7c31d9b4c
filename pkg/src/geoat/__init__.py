"""Geospatial audio tagging toolkit: POI context, fusion models, metrics and statistics."""

__version__ = "0.1.0"
