"""Surrogate-guided design space exploration for HLS pragma tuning."""

__version__ = "0.1.0"
