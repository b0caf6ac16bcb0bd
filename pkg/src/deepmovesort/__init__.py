"""Tracking-by-detection with a learned end-to-end motion filter."""

from .geometry import AffineTransform, BoundingBox, iou
from .tracker import PRESETS, Tracker, TrackerConfig, run_sequence
from .transfilter import TransFilter, TransFilterConfig

__all__ = ["AffineTransform", "BoundingBox", "iou", "PRESETS", "Tracker", "TrackerConfig",
           "run_sequence", "TransFilter", "TransFilterConfig"]
__version__ = "0.1.0"
