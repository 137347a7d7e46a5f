"""Integrated-gradients attribution and TAIG transfer attacks on small ReLU nets."""

__version__ = "0.1.0"
