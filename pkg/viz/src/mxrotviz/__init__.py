"""SVG figure rendering for mxrot experiment reports."""

from .reports import Report, ReportBundle, SchemaError, UnknownReportError, load_bundle
from .figures import build_figure, render

__all__ = [
    "Report",
    "ReportBundle",
    "SchemaError",
    "UnknownReportError",
    "load_bundle",
    "build_figure",
    "render",
]
