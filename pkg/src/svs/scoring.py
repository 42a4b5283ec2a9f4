"""Pose-kinematic anomaly scoring, action heuristics, and emergency rules.

Everything here consumes track windows (bbox + keypoints over time) and
calibrations; no pixels, no appearance. The anomaly scorer is a statistical
baseline behind a small interface so a learned scorer can replace it
without touching the rule engine.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import project_bev
from .errors import ConfigInvalid, InsufficientObservations

FEATURE_NAMES = ("speed", "acceleration", "keypoint_jitter",
                 "pose_spread", "bbox_aspect")
NUM_FEATURES = len(FEATURE_NAMES)

DEFAULT_HALF_LIFE_MS = 10 * 60_000
TRUST_SAMPLES = 100
DEFAULT_KAPPA = 8.0
VARIANCE_FLOOR = 1e-6
DEFAULT_ANOMALY_THRESHOLD = 0.9
DEFAULT_WATCHLIST = frozenset({"gun"})
ANOMALY_DEDUP_MS = 30_000

ALERT_KINDS = ("object", "anomaly", "occupancy")
# Severity is a function of kind, not of magnitude: the rule engine only
# fires past a threshold, so every alert is already actionable.
KIND_SEVERITY = {"object": "critical", "anomaly": "critical",
                 "occupancy": "warning"}


@dataclass(frozen=True)
class KinematicFeatures:
    """Per-window motion summary; all quantities are camera-invariant."""
    speed: float              # ground-plane, m/s
    acceleration: float       # signed, m/s^2
    keypoint_jitter: float    # box-local joint displacement per frame / height
    pose_spread: float        # keypoint std / height
    bbox_aspect: float        # mean w/h

    def __post_init__(self):
        vals = (self.speed, self.acceleration, self.keypoint_jitter,
                self.pose_spread, self.bbox_aspect)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("kinematic features must be finite")
        if self.speed < 0 or self.keypoint_jitter < 0 or self.pose_spread < 0:
            raise ValueError("kinematic features must be nonnegative")
        if self.bbox_aspect <= 0:
            raise ValueError("bbox_aspect must be positive")

    def as_array(self):
        return np.array([self.speed, self.acceleration, self.keypoint_jitter,
                         self.pose_spread, self.bbox_aspect])


def _ground_speeds(window, calib):
    """Per-interval ground speeds (m/s) and the interval dts (s)."""
    pts = [project_bev(o.bbox, calib) for o in window]
    speeds, dts = [], []
    for a, b, pa, pb in zip(window, window[1:], pts, pts[1:]):
        dt = (b.timestamp - a.timestamp) / 1000.0
        if dt <= 0:
            raise ValueError("window timestamps must be strictly increasing")
        speeds.append(math.hypot(pb[0] - pa[0], pb[1] - pa[1]) / dt)
        dts.append(dt)
    return speeds, dts


def _box_local(obs):
    """Joint coordinates relative to the box anchor, in units of height."""
    ax, ay = obs.bbox.bottom_center
    h = obs.bbox.h
    pts = obs.keypoints.pts
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = (pts[:, 0] - ax) / h
    out[:, 1] = (pts[:, 1] - ay) / h
    return out, pts[:, 2] > 0


def kinematics(window, calib):
    """Motion features for one track window.

    Jitter is measured in box-local coordinates so gross translation
    (walking) does not read as pose agitation; only relative limb motion
    counts.
    """
    if len(window) < 5:
        raise InsufficientObservations(
            f"kinematics needs >= 5 observations, got {len(window)}")
    speeds, dts = _ground_speeds(window, calib)
    speed = float(np.mean(speeds))

    accels = []
    for v0, v1, dt0, dt1 in zip(speeds, speeds[1:], dts, dts[1:]):
        accels.append((v1 - v0) / ((dt0 + dt1) / 2.0))
    acceleration = float(np.mean(accels)) if accels else 0.0

    jitter_sum, jitter_n = 0.0, 0
    prev_local, prev_vis = _box_local(window[0])
    for obs in window[1:]:
        local, vis = _box_local(obs)
        both = prev_vis & vis
        if both.any():
            d = local[both] - prev_local[both]
            jitter_sum += float(np.hypot(d[:, 0], d[:, 1]).sum())
            jitter_n += int(both.sum())
        prev_local, prev_vis = local, vis
    keypoint_jitter = jitter_sum / jitter_n if jitter_n else 0.0

    spreads = []
    for obs in window:
        pts = obs.keypoints.pts
        vis = pts[:, 2] > 0
        if vis.sum() >= 2:
            var = pts[vis, 0].var() + pts[vis, 1].var()
            spreads.append(math.sqrt(var) / obs.bbox.h)
    pose_spread = float(np.mean(spreads)) if spreads else 0.0

    bbox_aspect = float(np.mean([o.bbox.aspect for o in window]))
    return KinematicFeatures(speed=speed, acceleration=acceleration,
                             keypoint_jitter=keypoint_jitter,
                             pose_spread=pose_spread, bbox_aspect=bbox_aspect)


class CameraBaseline:
    """Exponentially decayed mean/variance of each feature for one camera.

    Sample mass halves every half_life_ms of wall time. The literal update
    count (not the decayed mass) gates trust: scores are forced to 0 until
    100 samples have arrived, so a freshly deployed camera cannot alarm.
    """

    __slots__ = ("half_life_ms", "count", "_w", "_mean", "_s", "_last_t")

    def __init__(self, half_life_ms=DEFAULT_HALF_LIFE_MS):
        if half_life_ms <= 0:
            raise ConfigInvalid("baseline.half_life_ms must be positive")
        self.half_life_ms = half_life_ms
        self.count = 0
        self._w = 0.0
        self._mean = np.zeros(NUM_FEATURES)
        self._s = np.zeros(NUM_FEATURES)
        self._last_t = None

    @property
    def trusted(self):
        return self.count >= TRUST_SAMPLES

    def update(self, features, now):
        x = features.as_array()
        if self._last_t is not None:
            if now < self._last_t:
                raise ValueError("baseline clock must not run backward")
            if now > self._last_t:
                decay = 0.5 ** ((now - self._last_t) / self.half_life_ms)
                self._w *= decay
                self._s *= decay
        self._last_t = now
        w_new = self._w + 1.0
        delta = x - self._mean
        self._mean = self._mean + delta / w_new
        # Weighted Welford: keeps the deviation sums nonnegative by
        # construction, so variance() never dips below 0.
        self._s = self._s + delta * (x - self._mean)
        self._w = w_new
        self.count += 1

    def mean(self):
        return self._mean.copy()

    def variance(self):
        if self._w <= 0.0:
            return np.zeros(NUM_FEATURES)
        return np.maximum(self._s / self._w, 0.0)


def anomaly_score(features, baseline, kappa=DEFAULT_KAPPA):
    """Mahalanobis-style distance squashed to [0,1); 0 iff z = 0."""
    if kappa <= 0:
        raise ConfigInvalid("scorer.kappa must be positive")
    if not baseline.trusted:
        return 0.0
    diff = features.as_array() - baseline.mean()
    var = np.maximum(baseline.variance(), VARIANCE_FLOOR)
    z = math.sqrt(float(np.sum(diff * diff / var)))
    return 1.0 - math.exp(-z / kappa)


class AnomalyScorer:
    """Scoring interface: one sample in, one score in [0,1] out."""

    def score(self, camera_id, features, now):
        raise NotImplementedError


class BaselineAnomalyScorer(AnomalyScorer):
    """Per-camera statistical scorer.

    A sample is scored against the baseline *before* it is folded in, so
    nothing is ever compared with itself.
    """

    def __init__(self, half_life_ms=DEFAULT_HALF_LIFE_MS, kappa=DEFAULT_KAPPA):
        if kappa <= 0:
            raise ConfigInvalid("scorer.kappa must be positive")
        self.half_life_ms = half_life_ms
        self.kappa = kappa
        self._baselines = {}

    def baseline(self, camera_id):
        b = self._baselines.get(camera_id)
        if b is None:
            b = self._baselines[camera_id] = CameraBaseline(self.half_life_ms)
        return b

    def score(self, camera_id, features, now):
        b = self.baseline(camera_id)
        s = anomaly_score(features, b, self.kappa)
        b.update(features, now)
        return s


class ConstantScorer(AnomalyScorer):
    """Fixed-score stand-in; value 0 silences anomaly alerts entirely."""

    def __init__(self, value=0.0):
        if not 0.0 <= value <= 1.0:
            raise ConfigInvalid("scorer.value must be in [0, 1]")
        self._value = value

    def score(self, camera_id, features, now):
        return self._value


@dataclass(frozen=True)
class ActionThresholds:
    standing_speed: float = 0.2   # m/s, below is standing
    running_speed: float = 2.5    # m/s, at or above is running
    fallen_aspect: float = 1.4    # w/h, above reads as horizontal
    fallen_frames: int = 5        # consecutive frames to call a fall

    def __post_init__(self):
        if not 0 < self.standing_speed < self.running_speed:
            raise ConfigInvalid(
                "actions.standing_speed must be in (0, running_speed)")
        if self.fallen_aspect <= 0:
            raise ConfigInvalid("actions.fallen_aspect must be positive")
        if self.fallen_frames < 1:
            raise ConfigInvalid("actions.fallen_frames must be >= 1")


DEFAULT_ACTION_THRESHOLDS = ActionThresholds()


def classify_action(window, calib, thresholds=DEFAULT_ACTION_THRESHOLDS):
    """Heuristic action label; total (never raises, falls back to unknown).

    A sustained horizontal box overrides the speed bands: a person being
    carried or sliding still reads as fallen.
    """
    if len(window) < 5:
        return "unknown"
    tail = window[-thresholds.fallen_frames:]
    if (len(tail) >= thresholds.fallen_frames
            and all(o.bbox.aspect > thresholds.fallen_aspect for o in tail)):
        return "fallen"
    try:
        speeds, _ = _ground_speeds(window, calib)
    except Exception:
        return "unknown"
    speed = float(np.mean(speeds))
    if speed < thresholds.standing_speed:
        return "standing"
    if speed >= thresholds.running_speed:
        return "running"
    return "walking"


@dataclass(frozen=True)
class EmergencyRuleSet:
    object_watchlist: frozenset = DEFAULT_WATCHLIST
    anomaly_threshold: float = DEFAULT_ANOMALY_THRESHOLD
    occupancy_limit: dict = field(default_factory=dict)  # camera_id -> int

    def __post_init__(self):
        object.__setattr__(self, "object_watchlist",
                           frozenset(self.object_watchlist))
        for cls in self.object_watchlist:
            if not isinstance(cls, str) or not cls:
                raise ConfigInvalid("rules.object_watchlist entries must be "
                                    "nonempty strings")
        if not 0.0 < self.anomaly_threshold <= 1.0:
            raise ConfigInvalid("rules.anomaly_threshold must be in (0, 1]")
        limits = dict(self.occupancy_limit)
        for cam, limit in limits.items():
            if not isinstance(limit, int) or isinstance(limit, bool) \
                    or limit <= 0:
                raise ConfigInvalid(
                    f"rules.occupancy_limit.{cam} must be a positive integer")
        object.__setattr__(self, "occupancy_limit", limits)


@dataclass(frozen=True)
class EmergencyAlert:
    """Push-channel payload. Carries identities and scalars only: no
    keypoints, no box history, nothing reversible."""
    alert_id: str
    kind: str
    camera_id: str
    site_id: str
    record_time: int
    severity: str
    score: float
    global_ids: tuple
    detail: str

    def __post_init__(self):
        if self.kind not in ALERT_KINDS:
            raise ValueError(f"unknown alert kind {self.kind!r}")
        if self.severity not in ("critical", "warning", "notice"):
            raise ValueError(f"unknown severity {self.severity!r}")
        if not math.isfinite(self.score) or self.score < 0:
            raise ValueError("alert score must be finite and nonnegative")
        if len(self.detail) > 256:
            raise ValueError("alert detail must fit in 256 characters")
        object.__setattr__(self, "global_ids", tuple(self.global_ids))

    def to_wire(self):
        return {"alert_id": self.alert_id, "rule": self.kind,
                "cam": self.camera_id, "t": self.record_time,
                "severity": self.severity, "score": round(self.score, 6),
                "gids": [float(g) for g in self.global_ids],
                "detail": self.detail}

    @staticmethod
    def from_wire(obj, site_id):
        expected = {"alert_id", "rule", "cam", "t", "severity", "score",
                    "gids", "detail"}
        if set(obj) != expected:
            raise ValueError(f"alert wire keys {sorted(obj)} != expected")
        return EmergencyAlert(alert_id=obj["alert_id"], kind=obj["rule"],
                              camera_id=obj["cam"], site_id=site_id,
                              record_time=int(obj["t"]),
                              severity=obj["severity"],
                              score=float(obj["score"]),
                              global_ids=tuple(int(g) for g in obj["gids"]),
                              detail=obj["detail"])


class RuleEngine:
    """Stateful emergency evaluation for one site.

    State exists only for rate semantics: per-identity anomaly dedup and
    per-camera occupancy edge triggering. Alert ids are a site-scoped
    counter so replays are deterministic.
    """

    def __init__(self, site_id, rules=None, *, dedup_ms=ANOMALY_DEDUP_MS):
        if dedup_ms < 0:
            raise ConfigInvalid("rules.dedup_ms must be nonnegative")
        self.site_id = site_id
        self.rules = rules if rules is not None else EmergencyRuleSet()
        self.dedup_ms = dedup_ms
        self._seq = 0
        self._last_anomaly = {}   # global_id -> last alert record_time
        self._over_limit = {}     # camera_id -> bool

    def _mint(self, kind, camera_id, t, score, gids, detail):
        self._seq += 1
        return EmergencyAlert(alert_id=f"{self.site_id}-{self._seq:08d}",
                              kind=kind, camera_id=camera_id,
                              site_id=self.site_id, record_time=t,
                              severity=KIND_SEVERITY[kind], score=score,
                              global_ids=gids, detail=detail)

    def evaluate_rules(self, event, records=(), occupancy=None):
        """Run all three rule families against one camera step.

        event: the DetectionEvent just processed (watchlist scan);
        records: AnalyticsRecords minted this step (anomaly scan);
        occupancy: current occupancy count for event's camera, or None
        when no snapshot was taken this step.
        """
        alerts = []
        cam = event.camera_id
        for det in event.detections:
            if det.cls in self.rules.object_watchlist:
                alerts.append(self._mint(
                    "object", cam, event.timestamp, det.confidence, (),
                    f"class={det.cls} conf={det.confidence:.2f}"))
        for rec in records:
            if rec.anomaly_score < self.rules.anomaly_threshold:
                continue
            last = self._last_anomaly.get(rec.global_id)
            if last is not None and rec.record_time - last < self.dedup_ms:
                continue
            self._last_anomaly[rec.global_id] = rec.record_time
            alerts.append(self._mint(
                "anomaly", rec.camera_id, rec.record_time, rec.anomaly_score,
                (rec.global_id,), f"score={rec.anomaly_score:.3f}"))
        limit = self.rules.occupancy_limit.get(cam)
        if occupancy is not None and limit is not None:
            over = occupancy > limit
            if over and not self._over_limit.get(cam, False):
                alerts.append(self._mint(
                    "occupancy", cam, event.timestamp, occupancy / limit, (),
                    f"count={occupancy} limit={limit}"))
            self._over_limit[cam] = over
        return alerts
