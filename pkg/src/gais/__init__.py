"""Graph-attention instance selection for tabular classification data."""

__version__ = "0.1.0"
