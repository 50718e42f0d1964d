"""Rehearsal engine for AI-directed responsive environments."""

__version__ = "0.1.0"
