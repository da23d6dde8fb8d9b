"""Neural approximation of Wasserstein distances between weighted point sets."""

__version__ = "0.1.0"
