"""Demonstration-guided actor-critic exploration for goal-conditioned tasks."""

__version__ = "0.1.0"
