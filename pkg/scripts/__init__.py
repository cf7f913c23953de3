"""Utility scripts for the restoration anomaly detector."""
