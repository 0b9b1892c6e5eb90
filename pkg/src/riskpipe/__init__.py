"""Accident-risk estimation from truck telemetry: data generation, ingestion,
windowing, FRESH-style features with a random forest, and a small 1-D CNN."""

__version__ = "0.1.0"
