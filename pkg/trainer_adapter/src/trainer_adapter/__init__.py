"""Torchvision detection adapter for the gridsight training harness."""

__version__ = "0.1.0"
