"""Proof-of-luck consensus on an emulated TEE, with simulator and statistics."""

__version__ = "0.1.0"
