"""Label-free mistake bounds for classifier ensembles."""

__version__ = "0.1.0"
