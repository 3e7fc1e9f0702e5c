"""Halo-exchange decomposition, mapping and a simulated multi-rank stencil solver."""

__version__ = "0.1.0"
