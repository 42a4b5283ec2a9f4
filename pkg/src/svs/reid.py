"""Cross-camera identity from pose geometry, behind a destroyable projection.

A track's recent window is condensed to a 16-dimensional descriptor of bone
proportions and gait kinematics; an epoch-scoped random orthonormal 8x16
projection maps it into the space where matching happens. The projection is
the only bridge between descriptor and embedding, it never leaves memory,
and rotation destroys it together with the whole gallery, so stored or
captured embeddings are unlinkable across epochs and non-invertible within
one.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analytics import project_bev
from .errors import (
    ConfigInvalid,
    DegeneratePose,
    InsufficientObservations,
    StaleEpoch,
)
from .model import CameraCalibration
from .tracker import Observation, Track

DESCRIPTOR_DIM = 16
EMBEDDING_DIM = 8

MIN_WINDOW = 15            # observations required before a descriptor exists
MIN_AVG_JOINTS = 8.0       # average visible joints across the window
TORSO_GUARD = 1e-6

DEFAULT_TAU = 0.3          # cosine distance acceptance radius
DEFAULT_EXEMPLARS = 10
DEFAULT_ROTATION_MS = 30 * 60_000

# Skeletal segments measured relative to torso length, in COCO indices:
# upper arms, forearms, thighs, shins, shoulder width, hip width.
BONES = (
    (5, 7), (6, 8), (7, 9), (8, 10),
    (11, 13), (12, 14), (13, 15), (14, 16),
    (5, 6), (11, 12),
)
# Left/right mirror partners among the bones above; the widths have none.
BONE_MIRROR = {0: 1, 1: 0, 2: 3, 3: 2, 4: 5, 5: 4, 6: 7, 7: 6}

LEFT_ANKLE, RIGHT_ANKLE = 15, 16

# Population-nominal raw feature values and spreads. Standardizing against
# them puts every dimension on a comparable scale, which is what makes a
# single cosine radius meaningful across bone ratios and m/s speeds alike.
NOMINAL_MEAN = np.array([
    0.47, 0.47, 0.47, 0.47,      # upper arms, forearms / torso
    0.65, 0.65, 0.65, 0.65,      # thighs, shins / torso
    0.68, 0.38,                  # shoulder width, hip width / torso
    1.70,                        # height, meters
    1.30,                        # mean ground speed, m/s
    0.05,                        # speed variance
    0.90,                        # stride frequency, Hz
    0.38,                        # bbox aspect mean
    0.30,                        # pose spread (keypoint std / box height)
])
NOMINAL_SCALE = np.array([
    0.04, 0.04, 0.04, 0.04,
    0.04, 0.04, 0.04, 0.04,
    0.04, 0.04,
    0.12, 0.25, 0.05, 0.30, 0.05, 0.05,
])


@dataclass(frozen=True)
class FeatureDescriptor:
    """Standardized, unit-norm pose/kinematics vector."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (DESCRIPTOR_DIM,):
            raise ValueError(f"descriptor must be {DESCRIPTOR_DIM}-d, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("descriptor has non-finite entries")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)


def _torso_length(pts: np.ndarray) -> Optional[float]:
    """Shoulder-center to hip-center distance; None if either side unseen."""
    vis = pts[:, 2] > 0
    shoulders = [i for i in (5, 6) if vis[i]]
    hips = [i for i in (11, 12) if vis[i]]
    if not shoulders or not hips:
        return None
    sc = pts[shoulders, :2].mean(axis=0)
    hc = pts[hips, :2].mean(axis=0)
    return float(np.hypot(*(sc - hc)))


def _stride_frequency(separation: np.ndarray, duration_s: float) -> float:
    """Gait cadence from the signed ankle-separation oscillation.

    Counts hysteresis-guarded crossings of the centered signal; one gait
    cycle produces two. Hysteresis keeps sensor jitter from counting.
    """
    if len(separation) < 4 or duration_s <= 0:
        return 0.0
    centered = separation - separation.mean()
    band = max(1e-6, 0.25 * float(centered.std()))
    state = 0
    crossings = 0
    for v in centered:
        if v > band:
            if state == -1:
                crossings += 1
            state = 1
        elif v < -band:
            if state == 1:
                crossings += 1
            state = -1
    return crossings / (2.0 * duration_s)


def raw_features(window: Sequence[Observation], calib: CameraCalibration) -> np.ndarray:
    """The 16 raw (unstandardized) descriptor features for a track window."""
    torso_vals = []
    bone_vals: list[list[float]] = [[] for _ in BONES]
    heights = []
    aspects = []
    spreads = []
    ankle_sep = []
    positions = []
    times = []

    for obs in window:
        pts = obs.keypoints.pts
        vis = pts[:, 2] > 0

        torso = _torso_length(pts)
        if torso is not None:
            torso_vals.append(torso)

        for b, (i, j) in enumerate(BONES):
            if vis[i] and vis[j]:
                bone_vals[b].append(float(np.hypot(pts[i, 0] - pts[j, 0],
                                                   pts[i, 1] - pts[j, 1])))

        u, v = obs.bbox.bottom_center
        heights.append(obs.bbox.h * calib.meters_per_pixel(u, v))
        aspects.append(obs.bbox.aspect)

        if vis.sum() >= 3:
            viskp = pts[vis, :2]
            spreads.append(float(np.sqrt(viskp[:, 0].var() + viskp[:, 1].var()))
                           / obs.bbox.h)

        if vis[LEFT_ANKLE] and vis[RIGHT_ANKLE]:
            ankle_sep.append(float(pts[LEFT_ANKLE, 0] - pts[RIGHT_ANKLE, 0]))

        positions.append(project_bev(obs.bbox, calib))
        times.append(obs.timestamp)

    if not torso_vals:
        raise DegeneratePose("no frame had both a shoulder and a hip visible")
    torso = float(np.mean(torso_vals))
    if torso < TORSO_GUARD:
        raise DegeneratePose(f"torso length {torso} below guard")

    ratios = np.empty(len(BONES))
    for b in range(len(BONES)):
        if bone_vals[b]:
            ratios[b] = np.mean(bone_vals[b]) / torso
        else:
            mirror = BONE_MIRROR.get(b)
            if mirror is not None and bone_vals[mirror]:
                ratios[b] = np.mean(bone_vals[mirror]) / torso
            else:
                # Never observed on either side: neutral after standardizing.
                ratios[b] = NOMINAL_MEAN[b]

    pos = np.asarray(positions)
    ts = np.asarray(times, dtype=np.float64) / 1000.0
    deltas = np.diff(ts)
    speeds = np.zeros(0)
    if len(pos) >= 2 and (deltas > 0).all():
        steps = np.hypot(np.diff(pos[:, 0]), np.diff(pos[:, 1]))
        speeds = steps / deltas
    mean_speed = float(speeds.mean()) if speeds.size else 0.0
    speed_var = float(speeds.var()) if speeds.size else 0.0

    duration = ts[-1] - ts[0] if len(ts) >= 2 else 0.0
    stride = _stride_frequency(np.asarray(ankle_sep), duration)

    return np.concatenate([
        ratios,
        [float(np.mean(heights)),
         mean_speed,
         speed_var,
         stride,
         float(np.mean(aspects)),
         float(np.mean(spreads)) if spreads else NOMINAL_MEAN[15]],
    ])


def descriptor(window: Sequence[Observation], calib: CameraCalibration,
               min_window: int = MIN_WINDOW,
               min_avg_joints: float = MIN_AVG_JOINTS) -> FeatureDescriptor:
    """Standardized unit descriptor for a track's observation window."""
    window = list(window)
    if len(window) < min_window:
        raise InsufficientObservations(
            f"window has {len(window)} observations, need {min_window}"
        )
    avg_joints = float(np.mean([o.keypoints.num_visible() for o in window]))
    if avg_joints < min_avg_joints:
        raise InsufficientObservations(
            f"average visible joints {avg_joints:.2f} below {min_avg_joints}"
        )
    raw = raw_features(window, calib)
    std = (raw - NOMINAL_MEAN) / NOMINAL_SCALE
    norm = float(np.linalg.norm(std))
    if norm < 1e-12:
        # A perfectly nominal subject: any fixed unit vector works; pick the
        # first axis so the result stays deterministic.
        unit = np.zeros(DESCRIPTOR_DIM)
        unit[0] = 1.0
        return FeatureDescriptor(unit)
    return FeatureDescriptor(std / norm)


class EpochKey:
    """The destroyable projection ("model weights") of one epoch.

    Exists only in memory: pickling and copying raise, no serializer knows
    the type, and no wire or storage schema has a field wide enough to carry
    the matrix (the audit checks that structurally).
    """

    __slots__ = ("epoch_id", "created_at", "_projection", "_destroyed")

    def __init__(self, epoch_id: int, created_at: int, projection: np.ndarray):
        if projection.shape != (EMBEDDING_DIM, DESCRIPTOR_DIM):
            raise ValueError(f"projection must be {EMBEDDING_DIM}x{DESCRIPTOR_DIM}")
        self.epoch_id = epoch_id
        self.created_at = created_at
        self._projection = projection
        self._destroyed = False

    @classmethod
    def generate(cls, epoch_id: int, created_at: int,
                 rng: np.random.Generator) -> "EpochKey":
        a = rng.normal(size=(DESCRIPTOR_DIM, EMBEDDING_DIM))
        q, _ = np.linalg.qr(a)
        return cls(epoch_id, created_at, np.ascontiguousarray(q.T))

    @property
    def destroyed(self) -> bool:
        return self._destroyed

    def project(self, vec: np.ndarray) -> np.ndarray:
        if self._destroyed:
            raise StaleEpoch(f"epoch {self.epoch_id} key has been destroyed")
        return self._projection @ vec

    def destroy(self) -> None:
        """Zero the weights in place, then refuse all further use."""
        self._projection[:] = 0.0
        self._destroyed = True

    def __reduce__(self):
        raise TypeError("EpochKey is not serializable by design")

    def __deepcopy__(self, memo):
        raise TypeError("EpochKey is not copyable by design")

    def __repr__(self):
        state = "destroyed" if self._destroyed else "active"
        return f"EpochKey(epoch={self.epoch_id}, {state})"


def embed(d: FeatureDescriptor, key: EpochKey) -> np.ndarray:
    """Project a descriptor into the epoch's matching space."""
    out = key.project(d.vector)
    out.flags.writeable = False
    return out


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 1.0
    return 1.0 - float(np.dot(a, b)) / (na * nb)


@dataclass
class GalleryEntry:
    global_id: int
    centroid: np.ndarray
    n: int
    exemplars: deque
    last_seen: int
    cameras_seen: set


class EpochGallery:
    """Embeddings of one epoch only; emptied, not archived, at rotation."""

    def __init__(self, epoch_id: int, max_exemplars: int = DEFAULT_EXEMPLARS):
        self.epoch_id = epoch_id
        self.max_exemplars = max_exemplars
        self.entries: dict[int, GalleryEntry] = {}

    def __len__(self):
        return len(self.entries)

    def nearest(self, e: np.ndarray) -> Optional[tuple[int, float]]:
        """Closest centroid by cosine distance; ties go to the lowest id."""
        best: Optional[tuple[int, float]] = None
        for gid in sorted(self.entries):
            d = cosine_distance(e, self.entries[gid].centroid)
            if best is None or d < best[1]:
                best = (gid, d)
        return best

    def add_observation(self, global_id: int, e: np.ndarray,
                        camera_id: str, now: int) -> None:
        entry = self.entries.get(global_id)
        if entry is None:
            self.entries[global_id] = GalleryEntry(
                global_id=global_id, centroid=np.array(e, dtype=np.float64),
                n=1, exemplars=deque([np.array(e)], maxlen=self.max_exemplars),
                last_seen=now, cameras_seen={camera_id},
            )
            return
        entry.n += 1
        entry.centroid += (e - entry.centroid) / entry.n
        entry.exemplars.append(np.array(e))
        entry.last_seen = max(entry.last_seen, now)
        entry.cameras_seen.add(camera_id)

    def destroy(self) -> None:
        self.entries.clear()


@dataclass(frozen=True)
class ReidConfig:
    min_window: int = MIN_WINDOW
    min_avg_joints: float = MIN_AVG_JOINTS
    tau: float = DEFAULT_TAU
    max_exemplars: int = DEFAULT_EXEMPLARS
    rotation_period_ms: int = DEFAULT_ROTATION_MS

    def __post_init__(self):
        if self.min_window < 2:
            raise ConfigInvalid(f"reid.min_window: {self.min_window}")
        if not (0.0 < self.tau <= 2.0):
            raise ConfigInvalid(f"reid.tau: {self.tau} outside (0, 2]")
        if self.max_exemplars < 1:
            raise ConfigInvalid(f"reid.max_exemplars: {self.max_exemplars}")
        if self.rotation_period_ms < 1:
            raise ConfigInvalid(f"reid.rotation_period_ms: {self.rotation_period_ms}")


class GlobalReid:
    """Site-wide identity assignment with epoch rotation.

    Single writer; rotation and matching share one lock so no match can
    straddle two epochs. Global ids increase monotonically for the life of
    the process and are never reissued, in or across epochs.
    """

    def __init__(self, site_id: str, calibrations: dict[str, CameraCalibration],
                 config: Optional[ReidConfig] = None,
                 seed: Optional[int] = None, now: int = 0):
        self.site_id = site_id
        self.calibrations = dict(calibrations)
        self.config = config or ReidConfig()
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self.key = EpochKey.generate(1, now, self._rng)
        self.gallery = EpochGallery(1, self.config.max_exemplars)
        self.rotations = 0
        self._next_gid = 1
        # (camera_id, track_id) -> (epoch_id, global_id)
        self._bindings: dict[tuple[str, int], tuple[int, int]] = {}

    @property
    def epoch_id(self) -> int:
        return self.key.epoch_id

    def epoch_metadata(self) -> tuple[int, int]:
        """(epoch_id, created_at) as plain ints; the projection never leaves."""
        with self._lock:
            return (self.key.epoch_id, self.key.created_at)

    def maybe_rotate(self, now: int) -> bool:
        """Rotate iff the current epoch has reached its configured age."""
        if now - self.key.created_at >= self.config.rotation_period_ms:
            self.rotate(now)
            return True
        return False

    def rotate(self, now: int) -> None:
        """Destroy the key and gallery; nothing about the old epoch survives."""
        with self._lock:
            old = self.key
            self.key = EpochKey.generate(old.epoch_id + 1, now, self._rng)
            self.gallery.destroy()
            self.gallery = EpochGallery(self.key.epoch_id, self.config.max_exemplars)
            self._bindings.clear()
            old.destroy()
            self.rotations += 1

    def embed(self, d: FeatureDescriptor) -> np.ndarray:
        return embed(d, self.key)

    def match(self, e: np.ndarray, camera_id: str, now: int) -> int:
        """Nearest-centroid match within tau, else a fresh global id.

        The gallery is updated either way.
        """
        with self._lock:
            found = self.gallery.nearest(e)
            if found is not None and found[1] <= self.config.tau:
                gid = found[0]
            else:
                gid = self._next_gid
                self._next_gid += 1
            self.gallery.add_observation(gid, e, camera_id, now)
            return gid

    def resolve(self, camera_id: str, track_id: int) -> Optional[int]:
        """The current-epoch binding for a track, if one exists."""
        b = self._bindings.get((camera_id, track_id))
        if b is not None and b[0] == self.key.epoch_id:
            return b[1]
        return None

    def observe_track(self, camera_id: str, track: Track) -> Optional[int]:
        """Bind a track to a global identity once its window qualifies.

        Returns the global id, or None while the track is too young or its
        pose too occluded. A binding holds for the rest of the epoch.
        """
        bound = self.resolve(camera_id, track.track_id)
        if bound is not None:
            return bound
        calib = self.calibrations.get(camera_id)
        if calib is None:
            return None
        cfg = self.config
        try:
            d = descriptor(track.history, calib,
                           min_window=cfg.min_window,
                           min_avg_joints=cfg.min_avg_joints)
        except (InsufficientObservations, DegeneratePose):
            return None
        e = self.embed(d)
        gid = self.match(e, camera_id, now=track.last_timestamp)
        self._bindings[(camera_id, track.track_id)] = (self.key.epoch_id, gid)
        return gid
