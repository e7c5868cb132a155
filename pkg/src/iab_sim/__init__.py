"""System-level simulator for in-band IAB deployments at mmWave."""

__version__ = "0.1.0"
