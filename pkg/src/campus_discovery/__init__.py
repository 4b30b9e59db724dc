"""Campus grid resource monitoring and discovery suite."""

__version__ = "0.1.0"
