"""Inter-layer expert affinity, placement and context-coherent expert-parallel simulation."""

__version__ = "0.1.0"
