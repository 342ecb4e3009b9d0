"""Geometric deviation analysis and voxel compensation for powder-bed printed specimens."""

__version__ = "0.1.0"
