"""Critical branching processes in a correlated (fractional Gaussian) environment."""

__version__ = "0.1.0"
