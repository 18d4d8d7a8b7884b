"""Multi-source matching of astronomical observation facility catalogs."""

__version__ = "0.1.0"
