"""Reinforced source-data selection for transfer learning on text matching."""

__version__ = "0.1.0"
