"""Partial point cloud pose alignment and classification toolkit."""

__version__ = "0.1.0"
