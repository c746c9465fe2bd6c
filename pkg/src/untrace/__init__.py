"""Fingerprint-removal attack on generated-image attribution, with a
self-contained evaluation bench built on procedural generators."""

__version__ = "0.1.0"
