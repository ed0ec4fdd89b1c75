"""Metapopulation epidemic simulation and mobility-network inference."""

__version__ = "0.1.0"
