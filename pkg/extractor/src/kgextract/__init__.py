"""Pooled encoder features for KG entities, written as binary feature files."""

__version__ = "0.1.0"
