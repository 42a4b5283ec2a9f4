"""Privacy-preserving video analytics over de-identified detection events.

The package never touches pixels: its input is a stream of bounding boxes
and body keypoints, its outputs are tracks, occupancy aggregates, heat maps
and anomaly alerts. Identity never leaves the edge node in linkable form.
"""

from .errors import SvsError
from .model import (
    AnalyticsRecord,
    BBox,
    CameraCalibration,
    Detection,
    DetectionEvent,
    Keypoints,
    event_to_line,
    parse_event_line,
    validate_event,
)

__version__ = "0.1.0"

__all__ = [
    "SvsError",
    "BBox",
    "Keypoints",
    "Detection",
    "DetectionEvent",
    "CameraCalibration",
    "AnalyticsRecord",
    "parse_event_line",
    "event_to_line",
    "validate_event",
    "__version__",
]
