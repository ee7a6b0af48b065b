"""Pulse-level compilation with a precompiled pulse library and warm-started QOC."""

__version__ = "0.1.0"
