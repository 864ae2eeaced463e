"""Pump-probe process tomography of excitonic aggregates."""

__version__ = "0.1.0"
