"""Finite elements for quasilinear elliptic problems with Muckenhoupt-weighted data."""

__version__ = "0.1.0"
