"""Foveated single-photon time-of-flight depth imaging simulator."""

__version__ = "0.1.0"
