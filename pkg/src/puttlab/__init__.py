"""Alternating Approach/Putt multi-stage speech enhancement at desk scale."""

__version__ = "0.1.0"
