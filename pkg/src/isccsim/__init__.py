"""Closed-loop integrated sensing, communication and control simulator for drone tracking."""

__version__ = "0.1.0"
