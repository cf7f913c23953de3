"""
Reports module for output generation.
"""

from .exporter import ReportExporter, StepLogWriter, read_step_log

__all__ = ["ReportExporter", "StepLogWriter", "read_step_log"]
