"""Numerical laboratory for magnetic fractional Sobolev seminorms, traces and extensions."""

__version__ = "0.1.0"

__all__ = ["field_model", "potential", "discretization", "norms", "trace_extension",
           "inequality_lab", "pullback_geometry", "cli"]
