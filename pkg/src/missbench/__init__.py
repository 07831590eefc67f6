"""Benchmark harness for missing-value injection, imputation, and holistic evaluation."""

__version__ = "0.1.0"
