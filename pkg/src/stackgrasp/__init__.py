"""Desk-scale workbench for stacked-scene grasp detection and manipulation ordering."""

__version__ = "0.1.0"
