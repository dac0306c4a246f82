"""Continual event extraction over a stream of disjoint event-type tasks."""

__version__ = "0.1.0"
