"""Experiment matrix runner, metric statistics, and report emission."""
