"""Graphlet screening for rare and weak signals under sparse correlated designs."""

__version__ = "0.1.0"
