"""Occupancy, ground-plane projection, and heat-map aggregation.

Everything here works on (global_id, camera_id, time, bbox) tuples and
produces aggregates: distinct-person counts, occupancy ratios against
history, and integer dwell-count grids. Nothing identity-bearing survives
aggregation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateProjection, GeometryMismatch, SchemaViolation
from .model import BBox, CameraCalibration

DAY_MS = 86_400_000

DEFAULT_WINDOW_MS = 5_000           # occupancy window
DEFAULT_BUCKET_MS = 15 * 60_000     # indicator time-of-day bucket
DEFAULT_PANE_MS = 5 * 60_000        # heat-map pane
DEFAULT_CELL_M = 0.5
DEFAULT_EXTENT = ((-50.0, -50.0), (50.0, 50.0))

LEVEL_LOW = "low"
LEVEL_NORMAL = "normal"
LEVEL_HIGH = "high"
RATIO_LOW = 0.5
RATIO_HIGH = 1.5


def project_ground(u: float, v: float, calib: CameraCalibration) -> tuple[float, float]:
    """Map an image point to ground-plane meters through the homography."""
    h = calib.matrix
    w = h[2, 0] * u + h[2, 1] * v + h[2, 2]
    if abs(w) < 1e-9:
        raise DegenerateProjection(
            f"{calib.camera_id}: point ({u}, {v}) maps to the line at infinity"
        )
    gx = (h[0, 0] * u + h[0, 1] * v + h[0, 2]) / w
    gy = (h[1, 0] * u + h[1, 1] * v + h[1, 2]) / w
    return gx, gy


def project_bev(bbox: BBox, calib: CameraCalibration) -> tuple[float, float]:
    """Ground position of a person box: project its bottom-center."""
    u, v = bbox.bottom_center
    return project_ground(u, v, calib)


@dataclass(frozen=True)
class BevPoint:
    global_id: int
    ground_x: float
    ground_y: float
    record_time: int


@dataclass(frozen=True)
class OccupancySnapshot:
    camera_id: str
    window_end: int
    count: int
    cumulative_today: int
    site_cumulative: int


@dataclass(frozen=True)
class OccupancyIndicator:
    camera_id: str
    ratio: float
    level: str

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError(f"negative occupancy ratio {self.ratio}")


def occupancy_to_wire(snapshot: OccupancySnapshot,
                      indicator: OccupancyIndicator) -> dict:
    if indicator.camera_id != snapshot.camera_id:
        raise ValueError("indicator and snapshot disagree on camera")
    return {
        "cam": snapshot.camera_id,
        "t": snapshot.window_end,
        "count": snapshot.count,
        "cum_today": snapshot.cumulative_today,
        "site_cum": snapshot.site_cumulative,
        "ratio": round(float(indicator.ratio), 6),
        "level": indicator.level,
    }


def occupancy_from_wire(obj: dict) -> tuple[OccupancySnapshot,
                                            OccupancyIndicator]:
    if not isinstance(obj, dict):
        raise SchemaViolation("occupancy payload must be an object")
    extra = set(obj) - {"cam", "t", "count", "cum_today", "site_cum",
                        "ratio", "level"}
    if extra:
        raise SchemaViolation(f"unexpected occupancy fields: {sorted(extra)}")
    try:
        snap = OccupancySnapshot(
            camera_id=str(obj["cam"]), window_end=int(obj["t"]),
            count=int(obj["count"]),
            cumulative_today=int(obj["cum_today"]),
            site_cumulative=int(obj["site_cum"]))
        ind = OccupancyIndicator(camera_id=snap.camera_id,
                                 ratio=float(obj["ratio"]),
                                 level=str(obj["level"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad occupancy payload: {exc}") from exc
    return snap, ind


def occupancy_indicator(snapshot: OccupancySnapshot,
                        baseline: Optional[float]) -> OccupancyIndicator:
    """Rate the current count against the historical same-time-of-day mean.

    baseline None means "fewer than one prior day of history": the cold
    start rule reports ratio 1 / normal rather than guessing.
    """
    if baseline is None:
        return OccupancyIndicator(snapshot.camera_id, 1.0, LEVEL_NORMAL)
    ratio = snapshot.count / max(baseline, 0.5)
    if ratio < RATIO_LOW:
        level = LEVEL_LOW
    elif ratio > RATIO_HIGH:
        level = LEVEL_HIGH
    else:
        level = LEVEL_NORMAL
    return OccupancyIndicator(snapshot.camera_id, ratio, level)


class HeatGrid:
    """Dense integer dwell-count grid over a fixed ground extent.

    Points outside the extent go to an overflow counter, never silently
    dropped. Counts are plain integers so merges are exact.
    """

    __slots__ = ("site_id", "cell_m", "origin", "counts", "window_from",
                 "window_to", "overflow", "_auto_window")

    def __init__(self, site_id: str, cell_m: float = DEFAULT_CELL_M,
                 extent=DEFAULT_EXTENT, window: tuple[int, int] = (0, 0),
                 counts: Optional[np.ndarray] = None, overflow: int = 0):
        (x0, y0), (x1, y1) = extent
        if not (x1 > x0 and y1 > y0 and cell_m > 0):
            raise ValueError(f"bad grid extent {extent} / cell {cell_m}")
        self.site_id = site_id
        self.cell_m = float(cell_m)
        self.origin = (float(x0), float(y0))
        ni = int(np.ceil((x1 - x0) / cell_m))
        nj = int(np.ceil((y1 - y0) / cell_m))
        if counts is None:
            self.counts = np.zeros((ni, nj), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (ni, nj):
                raise ValueError(f"counts shape {counts.shape} != extent shape {(ni, nj)}")
            if (counts < 0).any():
                raise ValueError("negative heat counts")
            self.counts = counts
        self.window_from, self.window_to = window
        self._auto_window = window == (0, 0)
        self.overflow = overflow

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def extent(self):
        ni, nj = self.counts.shape
        x0, y0 = self.origin
        return ((x0, y0), (x0 + ni * self.cell_m, y0 + nj * self.cell_m))

    def cell_of(self, gx: float, gy: float) -> Optional[tuple[int, int]]:
        i = int(np.floor((gx - self.origin[0]) / self.cell_m))
        j = int(np.floor((gy - self.origin[1]) / self.cell_m))
        ni, nj = self.counts.shape
        if 0 <= i < ni and 0 <= j < nj:
            return i, j
        return None

    def add(self, point: BevPoint) -> None:
        cell = self.cell_of(point.ground_x, point.ground_y)
        if cell is None:
            self.overflow += 1
            return
        self.counts[cell] += 1
        if not self._auto_window:
            return   # pane bounds were declared; points do not stretch them
        if self.window_from == 0 and self.window_to == 0:
            self.window_from = self.window_to = point.record_time
        else:
            self.window_from = min(self.window_from, point.record_time)
            self.window_to = max(self.window_to, point.record_time)

    def total(self) -> int:
        return int(self.counts.sum())

    def same_geometry(self, other: "HeatGrid") -> bool:
        return (self.site_id == other.site_id
                and self.cell_m == other.cell_m
                and self.origin == other.origin
                and self.counts.shape == other.counts.shape)

    def to_wire(self) -> dict:
        ni, nj = self.counts.shape
        return {
            "site": self.site_id,
            "from": int(self.window_from),
            "to": int(self.window_to),
            "cell_m": self.cell_m,
            "origin": [self.origin[0], self.origin[1]],
            "shape": [ni, nj],
            "counts": self.counts.tolist(),
            "overflow": int(self.overflow),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "HeatGrid":
        cell = float(obj["cell_m"])
        ox, oy = (float(v) for v in obj["origin"])
        ni, nj = (int(v) for v in obj["shape"])
        extent = ((ox, oy), (ox + ni * cell, oy + nj * cell))
        return cls(
            site_id=obj["site"], cell_m=cell, extent=extent,
            window=(int(obj["from"]), int(obj["to"])),
            counts=np.array(obj["counts"], dtype=np.int64),
            overflow=int(obj.get("overflow", 0)),
        )


def accumulate_heatmap(points: Iterable[BevPoint], site_id: str,
                       cell_m: float = DEFAULT_CELL_M,
                       extent=DEFAULT_EXTENT) -> HeatGrid:
    grid = HeatGrid(site_id, cell_m, extent)
    for p in points:
        grid.add(p)
    return grid


def merge_heatmaps(grids: Sequence[HeatGrid]) -> HeatGrid:
    """Cellwise exact-integer sum of panes with identical geometry.

    Pane windows must not overlap (they tile time); gaps are fine, a pane
    with no points simply was never emitted.
    """
    if not grids:
        raise ValueError("nothing to merge")
    first = grids[0]
    for g in grids[1:]:
        if not first.same_geometry(g):
            raise GeometryMismatch(
                f"grid geometry differs: {first.site_id}/{first.cell_m}/{first.origin}"
                f"/{first.shape} vs {g.site_id}/{g.cell_m}/{g.origin}/{g.shape}"
            )
    spans = sorted((g.window_from, g.window_to) for g in grids if g.total() or g.overflow)
    for (f0, t0), (f1, _) in zip(spans, spans[1:]):
        if f1 < t0:
            raise GeometryMismatch(
                f"pane windows overlap: [{f0}, {t0}] and [{f1}, ...]"
            )
    counts = np.zeros_like(first.counts)
    overflow = 0
    for g in grids:
        counts += g.counts
        overflow += g.overflow
    window = (min(g.window_from for g in grids), max(g.window_to for g in grids))
    return HeatGrid(first.site_id, first.cell_m, first.extent,
                    window=window, counts=counts, overflow=overflow)


@dataclass
class _CameraWindow:
    observations: list = field(default_factory=list)   # (t, gid, bbox)
    cumulative_today: set = field(default_factory=set)


@dataclass(frozen=True)
class TickResult:
    snapshot: OccupancySnapshot
    bev_points: tuple[BevPoint, ...]
    completed_panes: tuple[HeatGrid, ...]


class AnalyticsEngine:
    """Per-site aggregate state: occupancy windows, day counters, heat panes.

    observe() is called once per analytics record (per tracked person at
    record cadence); tick() closes a camera's occupancy window, producing
    the snapshot, one BEV point per active person, and any heat panes that
    rolled over. Heat points enter at tick cadence, not frame cadence,
    which keeps a simulated day's grid increments bounded.
    """

    def __init__(self, site_id: str, calibrations: dict[str, CameraCalibration],
                 window_ms: int = DEFAULT_WINDOW_MS,
                 pane_ms: int = DEFAULT_PANE_MS,
                 cell_m: float = DEFAULT_CELL_M,
                 extent=DEFAULT_EXTENT):
        self.site_id = site_id
        self.calibrations = dict(calibrations)
        self.window_ms = int(window_ms)
        self.pane_ms = int(pane_ms)
        self.cell_m = float(cell_m)
        self.extent = extent
        self._cameras: dict[str, _CameraWindow] = {}
        self._site_today: set[int] = set()
        self._day: Optional[int] = None
        self._pane: Optional[HeatGrid] = None
        self._pane_start: Optional[int] = None
        self._completed: list[HeatGrid] = []

    def observe(self, camera_id: str, global_id: int, t: int, bbox: BBox) -> None:
        self._roll_day(t)
        cam = self._cameras.setdefault(camera_id, _CameraWindow())
        cam.observations.append((t, global_id, bbox))
        cam.cumulative_today.add(global_id)
        self._site_today.add(global_id)

    def tick(self, camera_id: str, t: int) -> TickResult:
        """Close the window ending at t for one camera."""
        self._roll_day(t)
        cam = self._cameras.setdefault(camera_id, _CameraWindow())
        lo = t - self.window_ms
        cam.observations = [o for o in cam.observations if o[0] > lo and o[0] <= t]

        latest: dict[int, tuple[int, BBox]] = {}
        for ts, gid, bbox in cam.observations:
            prev = latest.get(gid)
            if prev is None or ts >= prev[0]:
                latest[gid] = (ts, bbox)

        snapshot = OccupancySnapshot(
            camera_id=camera_id,
            window_end=t,
            count=len(latest),
            cumulative_today=len(cam.cumulative_today),
            site_cumulative=len(self._site_today),
        )

        calib = self.calibrations.get(camera_id)
        points = []
        if calib is not None:
            for gid in sorted(latest):
                ts, bbox = latest[gid]
                try:
                    gx, gy = project_bev(bbox, calib)
                except DegenerateProjection:
                    continue
                points.append(BevPoint(gid, gx, gy, ts))
        self._advance_pane(t)
        for p in points:
            self._pane.add(p)

        completed = tuple(self._completed)
        self._completed.clear()
        return TickResult(snapshot, tuple(points), completed)

    def flush_pane(self) -> Optional[HeatGrid]:
        """Close the current pane early (end of run)."""
        pane = self._pane
        self._pane = None
        self._pane_start = None
        if pane is not None and (pane.total() or pane.overflow):
            return pane
        return None

    def _advance_pane(self, t: int) -> None:
        start = (t // self.pane_ms) * self.pane_ms
        if self._pane is None:
            self._open_pane(start)
            return
        if start > self._pane_start:
            if self._pane.total() or self._pane.overflow:
                self._completed.append(self._pane)
            self._open_pane(start)

    def _open_pane(self, start: int) -> None:
        self._pane = HeatGrid(self.site_id, self.cell_m, self.extent,
                              window=(start, start + self.pane_ms))
        self._pane_start = start

    def _roll_day(self, t: int) -> None:
        day = t // DAY_MS
        if self._day is None:
            self._day = day
        elif day != self._day:
            self._day = day
            self._site_today.clear()
            for cam in self._cameras.values():
                cam.cumulative_today.clear()
