"""Federated, differentially private training of a fingerprinting-script
detector over browser API traces, at desk scale."""

__version__ = "0.1.0"
