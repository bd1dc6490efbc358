"""Random walk in a Sinai-type random environment with a decaying power-law drift."""

__version__ = "0.1.0"
