"""POI-centric sidewalk accessibility audit toolkit."""

__version__ = "0.1.0"
