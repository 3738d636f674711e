"""Compile, verify and simulate network provisioning policies."""

__version__ = "0.1.0"
