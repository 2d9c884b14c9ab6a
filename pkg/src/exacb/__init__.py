"""Continuous benchmarking: harness adapter, report protocol, result stores and analysis."""

__version__ = "0.1.0"
