"""Federated learning over analog wireless links with joint device selection and power control."""

__version__ = "0.1.0"
