"""Explainer comparison toolkit for student-success models built on clickstream features."""

__version__ = "0.1.0"
