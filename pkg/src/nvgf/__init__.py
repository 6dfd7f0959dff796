"""Graph CNNs built from node-varying and hybrid node-varying graph filters."""

__version__ = "0.1.0"
