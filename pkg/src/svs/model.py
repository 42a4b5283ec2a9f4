"""Core domain types and the newline-delimited event interchange format.

Everything that enters the system is a :class:`DetectionEvent`: bounding
boxes, confidences and 17-joint keypoint sets. There is deliberately no type
here that can hold pixel buffers, face descriptors or free-text identity —
the parser hard-rejects any line that tries to smuggle one in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import (
    ForbiddenField,
    MalformedLine,
    NonMonotonicFrame,
    OutOfBounds,
    SchemaViolation,
)

FORMAT_VERSION = 1

# Any key whose lowercased name contains one of these tokens is rejected with
# ForbiddenField, at any nesting level. Substring matching errs toward privacy.
FORBIDDEN_FIELD_TOKENS = ("image", "pixel", "face", "jpeg", "png", "embedding_raw")

CLASS_PERSON = "person"
CLASS_GUN = "gun"

NUM_KEYPOINTS = 17

# COCO joint order, used by the descriptor and the simulator's template.
COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

ACTIONS = ("standing", "walking", "running", "fallen", "unknown")

_EVENT_KEYS = {"v", "site", "cam", "t", "frame", "dets"}
_DET_KEYS = {"cls", "conf", "bbox", "kp"}


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in image pixels, (x, y) = top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for v in (self.x, self.y, self.w, self.h):
            if not math.isfinite(v):
                raise SchemaViolation(f"bbox has non-finite component: {self}")
        if self.w <= 0 or self.h <= 0:
            raise SchemaViolation(f"bbox sides must be positive: w={self.w} h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def bottom_center(self) -> tuple[float, float]:
        """Ground contact point used for BEV projection."""
        return (self.x + self.w / 2.0, self.y + self.h)

    @property
    def aspect(self) -> float:
        return self.w / self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


class Keypoints:
    """Exactly 17 (x, y, confidence) triples in COCO joint order.

    A confidence of 0 means "joint not observed"; its x, y are ignored by
    every consumer. Backed by a read-only float array.
    """

    __slots__ = ("pts",)

    def __init__(self, pts):
        arr = np.asarray(pts, dtype=np.float64)
        if arr.shape != (NUM_KEYPOINTS, 3):
            raise SchemaViolation(
                f"keypoints must be {NUM_KEYPOINTS} (x, y, c) triples, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise SchemaViolation("keypoints contain non-finite values")
        conf = arr[:, 2]
        if (conf < 0).any() or (conf > 1).any():
            raise SchemaViolation("keypoint confidences must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        self.pts = arr

    @property
    def visible(self) -> np.ndarray:
        """Boolean mask of observed joints (confidence > 0)."""
        return self.pts[:, 2] > 0

    def num_visible(self) -> int:
        return int(self.visible.sum())

    def as_lists(self) -> list[list[float]]:
        return [[float(x), float(y), float(c)] for x, y, c in self.pts]

    def __eq__(self, other):
        return isinstance(other, Keypoints) and np.array_equal(self.pts, other.pts)

    def __repr__(self):
        return f"Keypoints({self.num_visible()}/{NUM_KEYPOINTS} visible)"


@dataclass(frozen=True)
class Detection:
    """One detected object in one frame."""

    bbox: BBox
    confidence: float
    cls: str
    keypoints: Optional[Keypoints] = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise SchemaViolation(f"confidence out of [0,1]: {self.confidence}")
        if self.cls == CLASS_PERSON and self.keypoints is None:
            raise SchemaViolation("person detection requires keypoints")
        if self.cls != CLASS_PERSON and self.keypoints is not None:
            raise SchemaViolation(f"keypoints not allowed for class {self.cls!r}")


@dataclass(frozen=True)
class DetectionEvent:
    """One camera frame's worth of de-identified detections."""

    camera_id: str
    site_id: str
    timestamp: int  # milliseconds since epoch, UTC
    frame_index: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if self.timestamp < 0:
            raise SchemaViolation(f"negative timestamp: {self.timestamp}")
        if self.frame_index < 0:
            raise SchemaViolation(f"negative frame index: {self.frame_index}")
        if not self.camera_id or not self.site_id:
            raise SchemaViolation("camera_id and site_id must be non-empty")


@dataclass(frozen=True)
class CameraCalibration:
    """Homography from the image plane to the ground plane (meters)."""

    camera_id: str
    site_id: str
    image_width: int
    image_height: int
    homography: tuple[float, ...]  # 9 values, row-major image -> ground

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise SchemaViolation("image dimensions must be positive")
        if len(self.homography) != 9:
            raise SchemaViolation("homography must have 9 entries")
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise SchemaViolation(f"homography for {self.camera_id} is singular")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.homography, dtype=np.float64).reshape(3, 3)

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def meters_per_pixel(self, u: float, v: float) -> float:
        """Local metric scale of the image->ground map at pixel (u, v).

        Square root of the absolute Jacobian determinant: the geometric-mean
        scale, exact for similarity homographies.
        """
        h = self.matrix
        w = h[2, 0] * u + h[2, 1] * v + h[2, 2]
        if abs(w) < 1e-9:
            raise SchemaViolation(f"degenerate scale at ({u}, {v}) for {self.camera_id}")
        gx = (h[0, 0] * u + h[0, 1] * v + h[0, 2]) / w
        gy = (h[1, 0] * u + h[1, 1] * v + h[1, 2]) / w
        dxu = (h[0, 0] - gx * h[2, 0]) / w
        dxv = (h[0, 1] - gx * h[2, 1]) / w
        dyu = (h[1, 0] - gy * h[2, 0]) / w
        dyv = (h[1, 1] - gy * h[2, 1]) / w
        det = dxu * dyv - dxv * dyu
        return math.sqrt(abs(det))


@dataclass(frozen=True)
class AnalyticsRecord:
    """The only identity-level datum ever stored or transmitted.

    Exactly six field groups; serialization rejects anything extra and the
    type has no slot for keypoints or image data.
    """

    global_id: int
    camera_id: str
    record_time: int
    bbox: BBox
    anomaly_score: float
    action: str

    def __post_init__(self):
        if not (0.0 <= self.anomaly_score <= 1.0):
            raise SchemaViolation(f"anomaly_score out of [0,1]: {self.anomaly_score}")
        if self.action not in ACTIONS:
            raise SchemaViolation(f"unknown action {self.action!r}")

    def to_wire(self) -> dict:
        return {
            "gid": self.global_id,
            "cam": self.camera_id,
            "t": self.record_time,
            "bbox": self.bbox.as_list(),
            "anomaly": round(float(self.anomaly_score), 6),
            "action": self.action,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "AnalyticsRecord":
        if not isinstance(obj, dict):
            raise SchemaViolation("analytics record must be an object")
        _check_forbidden_keys(obj)
        extra = set(obj) - {"gid", "cam", "t", "bbox", "anomaly", "action"}
        if extra:
            raise SchemaViolation(f"unexpected analytics record fields: {sorted(extra)}")
        try:
            bbox = BBox(*(float(v) for v in obj["bbox"]))
            return cls(
                global_id=int(obj["gid"]),
                camera_id=str(obj["cam"]),
                record_time=int(obj["t"]),
                bbox=bbox,
                anomaly_score=float(obj["anomaly"]),
                action=str(obj["action"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad analytics record: {exc}") from exc


@dataclass(frozen=True)
class ValidatedEvent:
    """A DetectionEvent that passed bounds and monotonicity checks."""

    event: DetectionEvent
    clamped: int = 0   # detections whose bbox was clipped to the image
    dropped: int = 0   # detections removed because clamping degenerated them


def _check_forbidden_keys(obj) -> None:
    """Recursively reject forbidden key names at any nesting level."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            lk = str(k).lower()
            for tok in FORBIDDEN_FIELD_TOKENS:
                if tok in lk:
                    raise ForbiddenField(f"forbidden field {k!r}")
            _check_forbidden_keys(v)
    elif isinstance(obj, list):
        for v in obj:
            _check_forbidden_keys(v)


def _require_number(obj: dict, key: str, ctx: str) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{ctx}: field {key!r} must be a number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise SchemaViolation(f"{ctx}: field {key!r} is not finite")
    return float(v)


def _require_int(obj: dict, key: str, ctx: str) -> int:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaViolation(f"{ctx}: field {key!r} must be an integer, got {type(v).__name__}")
    return v


def parse_event_line(line: str | bytes) -> DetectionEvent:
    """Parse one interchange-format line into a DetectionEvent.

    Raises MalformedLine for anything json cannot read, ForbiddenField for
    pixel/face/image fields (checked before everything else), and
    SchemaViolation for closed-schema breaches.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(f"not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedLine(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedLine("event line must be a JSON object")

    _check_forbidden_keys(obj)

    extra = set(obj) - _EVENT_KEYS
    if extra:
        raise SchemaViolation(f"unknown top-level keys: {sorted(extra)}")
    missing = _EVENT_KEYS - set(obj)
    if missing:
        raise SchemaViolation(f"missing top-level keys: {sorted(missing)}")
    if obj["v"] != FORMAT_VERSION:
        raise SchemaViolation(f"unsupported format version {obj['v']!r}")
    if not isinstance(obj["site"], str) or not isinstance(obj["cam"], str):
        raise SchemaViolation("'site' and 'cam' must be strings")
    t = _require_int(obj, "t", "event")
    frame = _require_int(obj, "frame", "event")
    dets_raw = obj["dets"]
    if not isinstance(dets_raw, list):
        raise SchemaViolation("'dets' must be a list")

    dets = []
    for i, d in enumerate(dets_raw):
        ctx = f"dets[{i}]"
        if not isinstance(d, dict):
            raise SchemaViolation(f"{ctx}: must be an object")
        extra = set(d) - _DET_KEYS
        if extra:
            raise SchemaViolation(f"{ctx}: unknown keys {sorted(extra)}")
        cls = d.get("cls")
        if not isinstance(cls, str) or not cls:
            raise SchemaViolation(f"{ctx}: 'cls' must be a non-empty string")
        conf = _require_number(d, "conf", ctx)
        if not (0.0 <= conf <= 1.0):
            raise SchemaViolation(f"{ctx}: 'conf' out of [0,1]")
        bbox_raw = d.get("bbox")
        if not isinstance(bbox_raw, list) or len(bbox_raw) != 4:
            raise SchemaViolation(f"{ctx}: 'bbox' must be [x, y, w, h]")
        for v in bbox_raw:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise SchemaViolation(f"{ctx}: bbox entries must be finite numbers")
        bbox = BBox(*(float(v) for v in bbox_raw))
        kp = None
        if cls == CLASS_PERSON:
            kp_raw = d.get("kp")
            if not isinstance(kp_raw, list) or len(kp_raw) != NUM_KEYPOINTS:
                raise SchemaViolation(f"{ctx}: 'kp' must be exactly {NUM_KEYPOINTS} triples")
            for j, trip in enumerate(kp_raw):
                if not isinstance(trip, list) or len(trip) != 3:
                    raise SchemaViolation(f"{ctx}: kp[{j}] must be [x, y, c]")
                for v in trip:
                    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                        raise SchemaViolation(f"{ctx}: kp[{j}] entries must be finite numbers")
            kp = Keypoints(kp_raw)
        elif "kp" in d:
            raise SchemaViolation(f"{ctx}: 'kp' only allowed for class person")
        dets.append(Detection(bbox=bbox, confidence=conf, cls=cls, keypoints=kp))

    return DetectionEvent(
        camera_id=obj["cam"],
        site_id=obj["site"],
        timestamp=t,
        frame_index=frame,
        detections=tuple(dets),
    )


def event_to_line(event: DetectionEvent) -> str:
    """Serialize an event to one interchange-format line (no newline)."""
    dets = []
    for d in event.detections:
        obj = {"cls": d.cls, "conf": float(d.confidence), "bbox": d.bbox.as_list()}
        if d.keypoints is not None:
            obj["kp"] = d.keypoints.as_lists()
        dets.append(obj)
    return json.dumps(
        {
            "v": FORMAT_VERSION,
            "site": event.site_id,
            "cam": event.camera_id,
            "t": event.timestamp,
            "frame": event.frame_index,
            "dets": dets,
        },
        separators=(",", ":"),
    )


def _clamp_bbox(bbox: BBox, width: int, height: int) -> Optional[BBox]:
    """Clip a box to the image; None if nothing of it remains."""
    x0 = min(max(bbox.x, 0.0), float(width))
    y0 = min(max(bbox.y, 0.0), float(height))
    x1 = min(max(bbox.x + bbox.w, 0.0), float(width))
    y1 = min(max(bbox.y + bbox.h, 0.0), float(height))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0)


def validate_event(
    event: DetectionEvent,
    calib: CameraCalibration,
    prev_frame: Optional[int] = None,
    *,
    policy: str = "clamp",
    prev_timestamp: Optional[int] = None,
) -> ValidatedEvent:
    """Enforce image bounds and per-camera monotonicity.

    policy "clamp" clips out-of-frame boxes to the image edge (detections
    that degenerate to zero area are dropped and counted); policy "strict"
    raises OutOfBounds instead.
    """
    if policy not in ("clamp", "strict"):
        raise ValueError(f"unknown bbox policy {policy!r}")
    if calib.camera_id != event.camera_id:
        raise SchemaViolation(
            f"calibration {calib.camera_id!r} used for event from {event.camera_id!r}"
        )
    if prev_frame is not None and event.frame_index <= prev_frame:
        raise NonMonotonicFrame(
            f"{event.camera_id}: frame {event.frame_index} after {prev_frame}"
        )
    if prev_timestamp is not None and event.timestamp < prev_timestamp:
        raise NonMonotonicFrame(
            f"{event.camera_id}: timestamp {event.timestamp} after {prev_timestamp}"
        )

    w, h = calib.image_width, calib.image_height
    clamped = dropped = 0
    out: list[Detection] = []
    for d in event.detections:
        b = d.bbox
        inside = b.x >= 0 and b.y >= 0 and b.x + b.w <= w and b.y + b.h <= h
        if inside:
            out.append(d)
            continue
        if policy == "strict":
            raise OutOfBounds(
                f"{event.camera_id}: bbox {b.as_list()} exceeds {w}x{h} image"
            )
        nb = _clamp_bbox(b, w, h)
        if nb is None:
            dropped += 1
            continue
        clamped += 1
        out.append(Detection(bbox=nb, confidence=d.confidence, cls=d.cls, keypoints=d.keypoints))

    if clamped or dropped:
        event = DetectionEvent(
            camera_id=event.camera_id,
            site_id=event.site_id,
            timestamp=event.timestamp,
            frame_index=event.frame_index,
            detections=tuple(out),
        )
    return ValidatedEvent(event=event, clamped=clamped, dropped=dropped)


def read_event_lines(lines: Iterable[str]):
    """Yield (line_number, DetectionEvent | SvsError) pairs, never raising."""
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield n, parse_event_line(line)
        except (MalformedLine, SchemaViolation, ForbiddenField) as exc:
            yield n, exc
