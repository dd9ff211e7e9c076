"""Reasoning-tree difficulty metrics and curriculum schedules for RLVR training."""

__version__ = "0.1.0"
