"""Per-camera multi-object tracking over bounding boxes and motion only.

Association is two-stage by detection confidence: confident detections are
matched first under a loose IoU gate, then the leftovers of both sides meet
under a tighter gate. Appearance plays no part; there are no pixels to
compare, which is the point.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigInvalid, NumericalFailure
from .model import BBox, Detection, Keypoints, CLASS_PERSON

# Noise scales relative to box height, the usual convention for pedestrian
# boxes where uncertainty grows with apparent size.
STD_WEIGHT_POSITION = 1.0 / 20.0
STD_WEIGHT_VELOCITY = 1.0 / 160.0

# Consecutive hits before a tentative track is trusted with a public identity.
CONFIRM_HITS = 3

DEFAULT_HISTORY_WINDOW = 30

# Floors for the aspect and height state components. A long-coasting track
# whose scale velocity went negative would otherwise predict its way to a
# box with nonpositive sides.
MIN_ASPECT = 1e-3
MIN_HEIGHT_PX = 1.0


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass(frozen=True)
class AssociationConfig:
    """Thresholds of the two-stage association."""

    det_high: float = 0.6
    det_low: float = 0.1
    iou_gate_stage1: float = 0.2
    iou_gate_stage2: float = 0.5
    init_confidence: float = 0.7
    max_lost_frames: int = 30

    def __post_init__(self):
        if not (0.0 <= self.det_low < self.det_high <= 1.0):
            raise ConfigInvalid(
                f"association.det_low/det_high: need 0 <= {self.det_low} < {self.det_high} <= 1"
            )
        for name in ("iou_gate_stage1", "iou_gate_stage2"):
            g = getattr(self, name)
            if not (0.0 < g <= 1.0):
                raise ConfigInvalid(f"association.{name}: gate {g} outside (0, 1]")
        if not (0.0 <= self.init_confidence <= 1.0):
            raise ConfigInvalid(f"association.init_confidence: {self.init_confidence}")
        if self.max_lost_frames < 1:
            raise ConfigInvalid(f"association.max_lost_frames: {self.max_lost_frames}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, 0 when the union is empty."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if ix <= 0:
        return 0.0
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def bbox_to_measurement(b: BBox) -> np.ndarray:
    """(cx, cy, aspect, height): aspect keeps scale positive under filtering."""
    return np.array([b.cx, b.cy, b.w / b.h, b.h], dtype=np.float64)


def measurement_to_bbox(z) -> BBox:
    cx, cy, a, h = (float(v) for v in z)
    w = a * h
    return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _motion_matrix(dt: int = 1) -> np.ndarray:
    f = np.eye(8)
    f[:4, 4:] = np.eye(4) * float(dt)
    return f


_F1 = _motion_matrix(1)


def _process_noise(height: float) -> np.ndarray:
    std = np.array([
        STD_WEIGHT_POSITION * height,
        STD_WEIGHT_POSITION * height,
        1e-2,
        STD_WEIGHT_POSITION * height,
        STD_WEIGHT_VELOCITY * height,
        STD_WEIGHT_VELOCITY * height,
        1e-5,
        STD_WEIGHT_VELOCITY * height,
    ])
    return np.diag(std * std)


def _measurement_noise(height: float) -> np.ndarray:
    std = np.array([
        STD_WEIGHT_POSITION * height,
        STD_WEIGHT_POSITION * height,
        1e-1,
        STD_WEIGHT_POSITION * height,
    ])
    return np.diag(std * std)


@dataclass(frozen=True)
class Observation:
    """One matched detection as remembered in a track's history window."""

    bbox: BBox
    keypoints: Keypoints
    timestamp: int


class Track:
    """Mutable per-camera track: Kalman state, lifecycle, history window."""

    __slots__ = (
        "track_id", "mean", "cov", "status", "frames_since_update",
        "consecutive_hits", "history", "last_timestamp", "started_at",
    )

    def __init__(self, track_id: int, det: Detection, timestamp: int,
                 history_window: int = DEFAULT_HISTORY_WINDOW):
        z = bbox_to_measurement(det.bbox)
        h = z[3]
        self.track_id = track_id
        self.mean = np.concatenate([z, np.zeros(4)])
        std = np.array([
            2 * STD_WEIGHT_POSITION * h,
            2 * STD_WEIGHT_POSITION * h,
            1e-2,
            2 * STD_WEIGHT_POSITION * h,
            10 * STD_WEIGHT_VELOCITY * h,
            10 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10 * STD_WEIGHT_VELOCITY * h,
        ])
        self.cov = np.diag(std * std)
        self.status = TrackStatus.TENTATIVE
        self.frames_since_update = 0
        self.consecutive_hits = 1
        self.history: deque[Observation] = deque(maxlen=history_window)
        self.history.append(Observation(det.bbox, det.keypoints, timestamp))
        self.last_timestamp = timestamp
        self.started_at = timestamp

    @property
    def bbox(self) -> BBox:
        """Box at the current (predicted or corrected) state mean."""
        return measurement_to_bbox(self.mean[:4])

    def _clamp_scale(self) -> None:
        # Keep the state inside the physical cone so .bbox is always legal.
        if self.mean[2] < MIN_ASPECT:
            self.mean[2] = MIN_ASPECT
        if self.mean[3] < MIN_HEIGHT_PX:
            self.mean[3] = MIN_HEIGHT_PX

    def predict(self, dt: int = 1) -> None:
        """Advance the motion model dt frames, growing uncertainty each frame."""
        if dt < 1:
            raise ValueError(f"dt must be >= 1, got {dt}")
        for _ in range(dt):
            q = _process_noise(self.mean[3])
            self.mean, self.cov = kernels.kalman_predict(self.mean, self.cov, _F1, q)
            self._clamp_scale()

    def update(self, det: Detection, timestamp: int) -> None:
        """Fold a matched measurement in; raises NumericalFailure if the
        covariance has left the positive-definite cone."""
        z = bbox_to_measurement(det.bbox)
        r = _measurement_noise(self.mean[3])
        self.mean, self.cov = kernels.kalman_update(self.mean, self.cov, z, r)
        self._clamp_scale()
        self.history.append(Observation(det.bbox, det.keypoints, timestamp))
        self.last_timestamp = timestamp
        self.frames_since_update = 0
        self.consecutive_hits += 1
        if self.status is TrackStatus.TENTATIVE:
            if self.consecutive_hits >= CONFIRM_HITS:
                self.status = TrackStatus.CONFIRMED
        else:
            self.status = TrackStatus.CONFIRMED

    def mark_missed(self, dt: int = 1) -> None:
        self.frames_since_update += dt
        self.consecutive_hits = 0
        if self.status is TrackStatus.CONFIRMED:
            self.status = TrackStatus.LOST


@dataclass(frozen=True)
class TrackOutput:
    """One tracked person this frame: identity plus the raw observation."""

    track_id: int
    bbox: BBox
    keypoints: Keypoints
    status: TrackStatus
    confidence: float
    det_index: int  # position in the step's detections list


@dataclass
class TrackerStats:
    frames_processed: int = 0
    tracks_spawned: int = 0
    tracks_terminated: int = 0
    numerical_failures: int = 0


class CameraTracker:
    """Tracker instance for one camera; single-threaded by construction."""

    def __init__(self, camera_id: str, config: Optional[AssociationConfig] = None,
                 history_window: int = DEFAULT_HISTORY_WINDOW):
        self.camera_id = camera_id
        self.config = config or AssociationConfig()
        self.history_window = history_window
        self.tracks: list[Track] = []
        self.stats = TrackerStats()
        self._next_id = 1
        self._last_frame: Optional[int] = None

    def live_tracks(self) -> list[Track]:
        return list(self.tracks)

    def step(self, detections: list[Detection], timestamp: int,
             frame_index: int) -> list[TrackOutput]:
        """Advance one frame: predict, associate in two stages, manage lifecycle.

        Only person detections participate; other classes pass through to the
        rule engine elsewhere. Returns an output per track observed this
        frame, sorted by track id.
        """
        cfg = self.config
        dt = 1
        if self._last_frame is not None:
            dt = frame_index - self._last_frame
            if dt < 1:
                raise ValueError(
                    f"{self.camera_id}: frame {frame_index} not after {self._last_frame}"
                )
        self._last_frame = frame_index
        self.stats.frames_processed += 1

        for tr in self.tracks:
            tr.predict(dt)

        persons = [(i, d) for i, d in enumerate(detections)
                   if d.cls == CLASS_PERSON]
        high = [(i, d) for i, d in persons if d.confidence >= cfg.det_high]
        low = [(i, d) for i, d in persons
               if cfg.det_low <= d.confidence < cfg.det_high]

        # Stage 1: every live track versus confident detections.
        track_pool = list(self.tracks)
        matches1, u_tracks, u_high = self._associate(
            track_pool, [d for _, d in high], cfg.iou_gate_stage1)

        # Stage 2: still-unmatched tracks versus low-confidence detections.
        # This is what keeps identities through occlusion-induced dips.
        remaining = [track_pool[i] for i in u_tracks]
        matches2, u_tracks2, _ = self._associate(
            remaining, [d for _, d in low], cfg.iou_gate_stage2)

        matched: list[tuple[Track, int, Detection]] = (
            [(track_pool[i], *high[j]) for i, j in matches1]
            + [(remaining[i], *low[j]) for i, j in matches2]
        )

        outputs: list[TrackOutput] = []
        dead: list[Track] = []
        for tr, det_idx, det in matched:
            try:
                tr.update(det, timestamp)
            except NumericalFailure:
                # A track whose covariance went bad is dropped outright;
                # restarting it would fabricate identity continuity.
                self.stats.numerical_failures += 1
                dead.append(tr)
                continue
            outputs.append(TrackOutput(tr.track_id, det.bbox, det.keypoints,
                                       tr.status, det.confidence, det_idx))

        for tr in (remaining[i] for i in u_tracks2):
            if tr.status is TrackStatus.TENTATIVE:
                # An unconfirmed track that skips a frame was likely a flicker.
                dead.append(tr)
                continue
            tr.mark_missed(dt)
            if tr.frames_since_update >= cfg.max_lost_frames:
                dead.append(tr)

        for tr in dead:
            self.tracks.remove(tr)
            self.stats.tracks_terminated += 1

        taken = {m[1] for m in matches1}
        for j, (det_idx, det) in enumerate(high):
            if j in taken:
                continue
            if det.confidence >= cfg.init_confidence:
                tr = Track(self._next_id, det, timestamp, self.history_window)
                self._next_id += 1
                self.tracks.append(tr)
                self.stats.tracks_spawned += 1
                outputs.append(TrackOutput(tr.track_id, det.bbox, det.keypoints,
                                           tr.status, det.confidence, det_idx))

        outputs.sort(key=lambda o: o.track_id)
        return outputs

    @staticmethod
    def _associate(tracks: list[Track], dets: list[Detection], gate: float):
        if not tracks or not dets:
            return [], list(range(len(tracks))), list(range(len(dets)))
        track_boxes = np.array([[t.bbox.x, t.bbox.y, t.bbox.w, t.bbox.h] for t in tracks])
        det_boxes = np.array([[d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h] for d in dets])
        cost = 1.0 - kernels.iou_matrix(track_boxes, det_boxes)
        return kernels.solve_assignment(cost, 1.0 - gate)
