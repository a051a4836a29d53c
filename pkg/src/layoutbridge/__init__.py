"""Text-to-layout generation on a discretized grid and layout quality scoring."""
from .geometry import BBox, GridSpec, Layout, LayoutObject, canonicalize_layout
from .metrics import LqsReport, MetricParams, aggregate_reports, layout_quality_score

__all__ = [
    "BBox",
    "GridSpec",
    "Layout",
    "LayoutObject",
    "canonicalize_layout",
    "LqsReport",
    "MetricParams",
    "aggregate_reports",
    "layout_quality_score",
]

__version__ = "0.1.0"
