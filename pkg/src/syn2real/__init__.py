"""Desk-scale synthetic-to-real transfer learning: retention-guided training
plus a learned per-layer-group learning-rate controller."""

__version__ = "0.1.0"
