"""Numerical toolkit for query complexity of sampling under Fisher-information
guarantees: bump instances, counting oracles, samplers, 1-D diagnostics and
reproducible experiments."""

__version__ = "0.1.0"
