"""Label propagation with learned edge weights on heterogeneous firm networks."""

__version__ = "0.1.0"
