"""Multi-agent screening pipeline for high-volume systematic literature reviews."""

__version__ = "0.1.0"
