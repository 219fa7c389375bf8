"""Batch renderer for causalink CSV outputs.

A pure file-to-file transformation: every statistic is read from the input
CSV; no numerical computation happens here beyond axis scaling.
"""

from .render import render_bias_surface, render_sim_summary
from .schemas import SchemaError

__all__ = ["render_bias_surface", "render_sim_summary", "SchemaError"]
