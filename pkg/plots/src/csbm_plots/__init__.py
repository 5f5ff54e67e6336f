"""Figures from csbmlab CSV tables; no science is recomputed here."""

from .render import FigureSpec, MissingColumns, UnknownKind, fit_loglog_slope, render

__version__ = "0.1.0"

__all__ = ["FigureSpec", "MissingColumns", "UnknownKind", "fit_loglog_slope", "render", "__version__"]
