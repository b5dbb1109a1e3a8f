"""tnml - matrix product state classifiers trained by two-site sweeps."""

__version__ = "0.1.0"
