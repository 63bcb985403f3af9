"""Federated time series diffusion over feature- and time-misaligned clients."""

__version__ = "0.1.0"
