"""Deterministic synthetic scenarios with ground truth.

Agents are stick figures walking the ground plane; cameras render them
through inverse homographies into detection events. One seeded generator
drives motion (trajectories, spawn draws, misses) and a second drives
render-only noise, so ground truth can be computed without rendering and
the event stream replays byte-identically as often as needed.
"""
import hashlib
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfig, MismatchedRun
from .model import (
    BBox,
    CLASS_GUN,
    CLASS_PERSON,
    Detection,
    DetectionEvent,
    Keypoints,
)

# 17-joint template: y as fraction of height from box top, x as signed
# fraction of height from the center line. Mirror pairs share row |x|.
_TEMPLATE = (
    (0.06, 0.00),
    (0.05, 0.02), (0.05, -0.02),
    (0.055, 0.04), (0.055, -0.04),
    (0.18, 0.115), (0.18, -0.115),
    (0.34, 0.13), (0.34, -0.13),
    (0.50, 0.14), (0.50, -0.14),
    (0.52, 0.065), (0.52, -0.065),
    (0.74, 0.07), (0.74, -0.07),
    (0.96, 0.075), (0.96, -0.075),
)
# (center_or_left, right) index pairs used to keep drawn anatomies symmetric.
_SIDE_SLOTS = ((0, 0), (1, 2), (3, 4), (5, 6), (7, 8), (9, 10),
               (11, 12), (13, 14), (15, 16))
LEFT_ANKLE, RIGHT_ANKLE = 15, 16

BASE_ASPECT = 0.38
GAIT_AMP_FRAC = 0.08
FIGHT_JITTER_FRAC = 0.05
GUN_WIDTH_M, GUN_HEIGHT_M = 0.45, 0.25
GUN_CONFIDENCE = 0.85
CROWD_RADIUS_M = 3.0

INJECTION_KINDS = ("fight", "gun", "crowd")
_DEFAULT_DURATION_S = {"fight": 30.0, "gun": 10.0, "crowd": 60.0}
# Alert kind produced by each injection kind, used by evaluate().
INJECTION_ALERT_KIND = {"fight": "anomaly", "gun": "object",
                       "crowd": "occupancy"}


@dataclass(frozen=True)
class DetectionNoise:
    bbox_jitter_px: float = 0.0
    keypoint_jitter_px: float = 0.0
    miss_probability: float = 0.0
    conf_mean: float = 0.9
    conf_std: float = 0.0
    occlusion_dip: float | None = None   # conf assigned to overlapping boxes
    occlusion_iou: float = 0.3

    def __post_init__(self):
        if self.bbox_jitter_px < 0 or self.keypoint_jitter_px < 0:
            raise InvalidConfig("noise jitter stds must be nonnegative")
        if not 0.0 <= self.miss_probability <= 1.0:
            raise InvalidConfig("noise.miss_probability must be in [0, 1]")
        if not 0.0 < self.conf_mean <= 1.0:
            raise InvalidConfig("noise.conf_mean must be in (0, 1]")
        if self.conf_std < 0:
            raise InvalidConfig("noise.conf_std must be nonnegative")
        if self.occlusion_dip is not None \
                and not 0.0 < self.occlusion_dip <= 1.0:
            raise InvalidConfig("noise.occlusion_dip must be in (0, 1]")
        if not 0.0 < self.occlusion_iou < 1.0:
            raise InvalidConfig("noise.occlusion_iou must be in (0, 1)")


@dataclass(frozen=True)
class Injection:
    kind: str
    t_s: float
    location: tuple
    duration_s: float | None = None
    size: int = 8   # crowd only

    def __post_init__(self):
        if self.kind not in INJECTION_KINDS:
            raise InvalidConfig(f"injection kind {self.kind!r} unknown")
        if self.t_s < 0:
            raise InvalidConfig("injection.t_s must be nonnegative")
        if self.duration_s is not None and self.duration_s <= 0:
            raise InvalidConfig("injection.duration_s must be positive")
        if self.size < 1:
            raise InvalidConfig("injection.size must be >= 1")
        object.__setattr__(self, "location",
                           (float(self.location[0]), float(self.location[1])))

    @property
    def effective_duration_s(self):
        return self.duration_s if self.duration_s is not None \
            else _DEFAULT_DURATION_S[self.kind]


@dataclass(frozen=True)
class AgentScript:
    """Explicit waypoint walker; waypoints cycle."""
    waypoints: tuple
    speed_m: float | None = None
    height_m: float | None = None
    spawn_s: float = 0.0

    def __post_init__(self):
        wps = tuple((float(x), float(y)) for x, y in self.waypoints)
        if not wps:
            raise InvalidConfig("script.waypoints must be nonempty")
        object.__setattr__(self, "waypoints", wps)
        if self.speed_m is not None and self.speed_m <= 0:
            raise InvalidConfig("script.speed_m must be positive")
        if self.height_m is not None and not 1.2 <= self.height_m <= 2.2:
            raise InvalidConfig("script.height_m must be in [1.2, 2.2]")
        if self.spawn_s < 0:
            raise InvalidConfig("script.spawn_s must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_s: float
    cameras: tuple
    site_id: str = "s1"
    fps: float = 15.0
    agent_count: int = 0
    scripted: tuple = ()
    spawn_interval_s: float = 0.0
    walk_speed_mean: float = 1.4
    walk_speed_std: float = 0.2
    noise: DetectionNoise = field(default_factory=DetectionNoise)
    injections: tuple = ()
    site_extent: tuple = ((0.0, 0.0), (40.0, 30.0))

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise InvalidConfig("seed must be an integer")
        if self.duration_s <= 0:
            raise InvalidConfig("duration_s must be positive")
        if self.fps <= 0:
            raise InvalidConfig("fps must be positive")
        if not self.cameras:
            raise InvalidConfig("at least one camera is required")
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise InvalidConfig("camera ids must be unique")
        if not self.site_id:
            raise InvalidConfig("site_id must be nonempty")
        if self.agent_count < 0:
            raise InvalidConfig("agent_count must be nonnegative")
        if self.spawn_interval_s < 0:
            raise InvalidConfig("spawn_interval_s must be nonnegative")
        if self.walk_speed_mean <= 0 or self.walk_speed_std < 0:
            raise InvalidConfig("walk speed distribution invalid")
        (x0, y0), (x1, y1) = self.site_extent
        if not (x1 > x0 and y1 > y0):
            raise InvalidConfig("site_extent must span positive area")
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "scripted", tuple(self.scripted))
        object.__setattr__(self, "injections", tuple(self.injections))
        object.__setattr__(
            self, "site_extent",
            ((float(x0), float(y0)), (float(x1), float(y1))))
        for s in self.scripted:
            for wx, wy in s.waypoints:
                if not (x0 <= wx <= x1 and y0 <= wy <= y1):
                    raise InvalidConfig(
                        f"script waypoint ({wx}, {wy}) outside site extent")
        for inj in self.injections:
            if inj.t_s >= self.duration_s:
                raise InvalidConfig("injection.t_s beyond scenario duration")
            ix, iy = inj.location
            if not (x0 <= ix <= x1 and y0 <= iy <= y1):
                raise InvalidConfig("injection location outside site extent")

    @property
    def n_frames(self):
        return int(round(self.duration_s * self.fps))

    def frame_ms(self, k):
        return round(k * 1000.0 / self.fps)


def config_digest(config):
    """Canonical content hash; names the run."""
    def enc(o):
        if isinstance(o, ScenarioConfig):
            return {"seed": o.seed, "duration_s": o.duration_s,
                    "site_id": o.site_id, "fps": o.fps,
                    "agent_count": o.agent_count,
                    "spawn_interval_s": o.spawn_interval_s,
                    "walk_speed": [o.walk_speed_mean, o.walk_speed_std],
                    "site_extent": o.site_extent,
                    "cameras": [{"id": c.camera_id, "site": c.site_id,
                                 "w": c.image_width, "h": c.image_height,
                                 "H": list(c.homography)}
                                for c in o.cameras],
                    "scripted": [{"wp": s.waypoints, "v": s.speed_m,
                                  "h": s.height_m, "t": s.spawn_s}
                                 for s in o.scripted],
                    "noise": [o.noise.bbox_jitter_px,
                              o.noise.keypoint_jitter_px,
                              o.noise.miss_probability, o.noise.conf_mean,
                              o.noise.conf_std, o.noise.occlusion_dip,
                              o.noise.occlusion_iou],
                    "injections": [{"kind": i.kind, "t": i.t_s,
                                    "loc": i.location,
                                    "d": i.effective_duration_s,
                                    "n": i.size}
                                   for i in o.injections]}
        raise TypeError(type(o).__name__)
    blob = json.dumps(enc(config), sort_keys=True,
                      separators=(",", ":")).encode()
    return "run-" + hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class InjectionTruth:
    kind: str
    t_on_ms: int
    t_off_ms: int
    location: tuple
    involved: tuple


@dataclass(frozen=True)
class AgentTruth:
    agent_id: int
    kind: str          # walker | scripted | fight | crowd
    spawn_ms: int
    despawn_ms: int    # end of run for permanent agents
    height_m: float
    speed_m: float


class GroundTruth:
    """Everything the metrics need: who was where, seen by whom, when."""

    def __init__(self, run_id, site_id, fps, duration_ms, camera_ids):
        self.run_id = run_id
        self.site_id = site_id
        self.fps = fps
        self.duration_ms = duration_ms
        self.camera_ids = tuple(camera_ids)
        self.agents = {}            # agent_id -> AgentTruth
        self.visibility = {}        # (agent_id, camera_id) -> [[on, off)]
        self.frame_agents = {c: [] for c in camera_ids}  # det-order ids
        self.injections = []        # [InjectionTruth]
        self.trajectories = {}      # agent_id -> [(t_ms, x, y)] ~1 Hz

    def frame_ms(self, k):
        return round(k * 1000.0 / self.fps)

    def agent_for(self, camera_id, frame_index, det_index):
        return self.frame_agents[camera_id][frame_index][det_index]

    def covisibility(self, min_ms):
        """(agent, cam_a, cam_b, on, off) intervals of length >= min_ms."""
        out = []
        for aid in sorted(self.agents):
            if self.agents[aid].agent_id < 0:
                continue
            cams = [c for c in self.camera_ids if (aid, c) in self.visibility]
            for i, ca in enumerate(cams):
                for cb in cams[i + 1:]:
                    for a0, a1 in self.visibility[(aid, ca)]:
                        for b0, b1 in self.visibility[(aid, cb)]:
                            lo, hi = max(a0, b0), min(a1, b1)
                            if hi - lo >= min_ms:
                                out.append((aid, ca, cb, lo, hi))
        return out

    def visible_agents(self, camera_id, t_from, t_to):
        """Agents whose visibility in camera_id intersects (t_from, t_to]."""
        out = set()
        for (aid, cam), spans in self.visibility.items():
            if cam != camera_id:
                continue
            for on, off in spans:
                if on <= t_to and off > t_from:
                    out.add(aid)
                    break
        return out

    def to_json_obj(self):
        return {
            "run_id": self.run_id, "site_id": self.site_id, "fps": self.fps,
            "duration_ms": self.duration_ms,
            "camera_ids": list(self.camera_ids),
            "agents": {str(a.agent_id): [a.kind, a.spawn_ms, a.despawn_ms,
                                         a.height_m, a.speed_m]
                       for a in self.agents.values()},
            "visibility": {f"{aid}|{cam}": spans
                           for (aid, cam), spans in self.visibility.items()},
            "frame_agents": {cam: [list(t) for t in rows]
                             for cam, rows in self.frame_agents.items()},
            "injections": [[i.kind, i.t_on_ms, i.t_off_ms,
                            list(i.location), list(i.involved)]
                           for i in self.injections],
            "trajectories": {str(aid): rows
                             for aid, rows in self.trajectories.items()},
        }

    @classmethod
    def from_json_obj(cls, obj):
        gt = cls(obj["run_id"], obj["site_id"], obj["fps"],
                 obj["duration_ms"], obj["camera_ids"])
        for sid, (kind, on, off, h, v) in obj["agents"].items():
            aid = int(sid)
            gt.agents[aid] = AgentTruth(aid, kind, on, off, h, v)
        for key, spans in obj["visibility"].items():
            sid, cam = key.split("|", 1)
            gt.visibility[(int(sid), cam)] = [list(s) for s in spans]
        gt.frame_agents = {cam: [tuple(r) for r in rows]
                           for cam, rows in obj["frame_agents"].items()}
        gt.injections = [InjectionTruth(k, on, off, tuple(loc), tuple(inv))
                         for k, on, off, loc, inv in obj["injections"]]
        gt.trajectories = {int(sid): [tuple(r) for r in rows]
                           for sid, rows in obj["trajectories"].items()}
        return gt


class _Camera:
    __slots__ = ("camera_id", "H", "Hinv", "absdet", "width", "height")

    def __init__(self, calib):
        self.camera_id = calib.camera_id
        self.H = tuple(calib.homography)
        hinv = calib.inverse_matrix()
        self.Hinv = tuple(float(x) for x in hinv.ravel())
        self.absdet = abs(float(np.linalg.det(calib.matrix)))
        self.width = calib.image_width
        self.height = calib.image_height

    def place(self, gx, gy, height_m, aspect):
        """Image footprint of a person at ground (gx, gy), or None when any
        part of the box would leave the frame."""
        g = self.Hinv
        w = g[6] * gx + g[7] * gy + g[8]
        if abs(w) < 1e-12:
            return None
        u = (g[0] * gx + g[1] * gy + g[2]) / w
        v = (g[3] * gx + g[4] * gy + g[5]) / w
        h = self.H
        wf = h[6] * u + h[7] * v + h[8]
        if abs(wf) < 1e-12:
            return None
        # Jacobian determinant of a projective map is det(H) / w^3.
        mpp = math.sqrt(self.absdet / abs(wf) ** 3)
        h_px = height_m / mpp
        w_px = aspect * h_px
        if (u - w_px / 2.0 < 0.0 or u + w_px / 2.0 > self.width
                or v - h_px < 0.0 or v > self.height):
            return None
        return u, v, h_px, mpp


class _Agent:
    __slots__ = ("aid", "kind", "pos", "target", "speed", "height_m",
                 "aspect", "stride_len", "gait_amp", "phase", "ty", "tx",
                 "script", "wp_i", "anchor", "despawn_ms")

    def __init__(self, aid, kind, pos, speed, body, script=None, anchor=None,
                 despawn_ms=None):
        self.aid = aid
        self.kind = kind
        self.pos = [float(pos[0]), float(pos[1])]
        self.target = None
        self.speed = speed
        self.height_m, self.aspect, self.stride_len, self.gait_amp, \
            self.ty, self.tx = body
        self.phase = 0.0
        self.script = script
        self.wp_i = 0
        self.anchor = anchor
        self.despawn_ms = despawn_ms

    def _next_target(self, rng, extent):
        if self.script is not None:
            self.wp_i = (self.wp_i + 1) % len(self.script.waypoints)
            return list(self.script.waypoints[self.wp_i])
        (x0, y0), (x1, y1) = extent
        if self.anchor is not None:
            r = CROWD_RADIUS_M * math.sqrt(rng.random())
            th = rng.random() * 2.0 * math.pi
            tx = min(max(self.anchor[0] + r * math.cos(th), x0), x1)
            ty = min(max(self.anchor[1] + r * math.sin(th), y0), y1)
            return [tx, ty]
        return [rng.uniform(x0, x1), rng.uniform(y0, y1)]

    def advance(self, dt_s, rng, extent):
        if self.speed <= 0.0 or dt_s <= 0.0:
            return
        budget = self.speed * dt_s
        while budget > 1e-12:
            if self.target is None:
                self.target = self._next_target(rng, extent)
            dx = self.target[0] - self.pos[0]
            dy = self.target[1] - self.pos[1]
            dist = math.hypot(dx, dy)
            if dist <= budget:
                self.pos = [self.target[0], self.target[1]]
                self.phase += 2.0 * math.pi * dist / self.stride_len
                budget -= dist
                self.target = self._next_target(rng, extent)
                if dist < 1e-12 and self.script is not None \
                        and len(self.script.waypoints) == 1:
                    return   # stationary script
            else:
                f = budget / dist
                self.pos[0] += dx * f
                self.pos[1] += dy * f
                self.phase += 2.0 * math.pi * budget / self.stride_len
                budget = 0.0


def _draw_body(rng, height_m=None, speed=None, speed_mean=1.4, speed_std=0.2):
    """Per-agent anatomy and gait draws, in a fixed order."""
    h = rng.uniform(1.55, 1.9) if height_m is None else float(height_m)
    if speed is None:
        speed = float(min(max(rng.normal(speed_mean, speed_std), 0.3), 3.5))
    stride = rng.uniform(1.25, 1.65)
    aspect = BASE_ASPECT * float(min(max(rng.normal(1.0, 0.05), 0.85), 1.15))
    gait_amp = GAIT_AMP_FRAC * float(min(max(rng.normal(1.0, 0.1), 0.7), 1.3))
    # Symmetric anatomy: one multiplicative draw per mirror slot.
    fy = np.ones(17)
    fx = np.ones(17)
    for a, b in _SIDE_SLOTS:
        jy = float(min(max(rng.normal(1.0, 0.06), 0.8), 1.2))
        jx = float(min(max(rng.normal(1.0, 0.06), 0.8), 1.2))
        fy[a] = fy[b] = jy
        fx[a] = fx[b] = jx
    ty = np.array([t[0] for t in _TEMPLATE]) * fy
    tx = np.array([t[1] for t in _TEMPLATE]) * fx
    return h, aspect, stride, gait_amp, ty, tx, speed


def render_camera(agent, cam, noise, rng):
    """One agent through one camera: Detection or None (out of frustum).

    Noise is applied last: keypoint jitter, then box jitter, then the
    confidence draw; a fight agent flails before noise.
    """
    placed = cam.place(agent.pos[0], agent.pos[1], agent.height_m,
                       agent.aspect)
    if placed is None:
        return None
    u, v, h_px, _ = placed
    xs = u + agent.tx * h_px
    ys = (v - h_px) + agent.ty * h_px
    swing = agent.gait_amp * h_px * math.sin(agent.phase)
    xs[LEFT_ANKLE] += swing
    xs[RIGHT_ANKLE] -= swing
    if agent.kind == "fight":
        amp = FIGHT_JITTER_FRAC * h_px
        off = rng.uniform(-amp, amp, (2, 17))
        xs = xs + off[0]
        ys = ys + off[1]
    if noise.keypoint_jitter_px > 0:
        off = rng.normal(0.0, noise.keypoint_jitter_px, (2, 17))
        xs = xs + off[0]
        ys = ys + off[1]
    w_px = agent.aspect * h_px
    bx, by, bw, bh = u - w_px / 2.0, v - h_px, w_px, h_px
    if noise.bbox_jitter_px > 0:
        d = rng.normal(0.0, noise.bbox_jitter_px, 2)
        s = rng.normal(0.0, noise.bbox_jitter_px / 2.0, 2)
        bx, by = bx + d[0], by + d[1]
        bw, bh = max(bw + s[0], 4.0), max(bh + s[1], 4.0)
    conf = noise.conf_mean
    if noise.conf_std > 0:
        conf = float(min(max(rng.normal(noise.conf_mean, noise.conf_std),
                             0.05), 0.999))
    pts = np.empty((17, 3))
    pts[:, 0] = xs
    pts[:, 1] = ys
    pts[:, 2] = conf
    return Detection(bbox=BBox(bx, by, bw, bh), confidence=conf,
                     cls=CLASS_PERSON, keypoints=Keypoints(pts))


def _render_gun(location, cam):
    placed = cam.place(location[0], location[1], GUN_HEIGHT_M,
                       GUN_WIDTH_M / GUN_HEIGHT_M)
    if placed is None:
        return None
    u, v, h_px, _ = placed
    w_px = (GUN_WIDTH_M / GUN_HEIGHT_M) * h_px
    return Detection(bbox=BBox(u - w_px / 2.0, v - h_px, w_px, h_px),
                     confidence=GUN_CONFIDENCE, cls=CLASS_GUN)


def _iou(a, b):
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    return inter / (a.w * a.h + b.w * b.h - inter)


def _drive(config, render):
    """The one simulation loop. Yields events when render is true; returns
    GroundTruth either way. Motion draws come from rng_m in an order that
    does not depend on `render`; render-only draws come from rng_n."""
    rng_m = np.random.default_rng([config.seed, 0])
    rng_n = np.random.default_rng([config.seed, 1])
    cams = sorted((_Camera(c) for c in config.cameras),
                  key=lambda c: c.camera_id)
    truth = GroundTruth(config_digest(config), config.site_id, config.fps,
                        config.frame_ms(config.n_frames),
                        [c.camera_id for c in cams])
    extent = config.site_extent
    end_ms = truth.duration_ms

    # (spawn_ms, order, factory) processed in time order; factories draw
    # from rng_m when called, keeping the draw sequence configuration-fixed.
    spawns = []
    aid = 0
    for s in config.scripted:
        aid += 1
        spawns.append((round(s.spawn_s * 1000), aid, "scripted", s, None))
    for i in range(config.agent_count):
        aid += 1
        spawns.append((round(i * config.spawn_interval_s * 1000), aid,
                       "walker", None, None))
    inj_truth = []
    gun_windows = []   # (on_ms, off_ms, location, neg_id)
    for j, inj in enumerate(config.injections):
        on = round(inj.t_s * 1000)
        off = min(round((inj.t_s + inj.effective_duration_s) * 1000), end_ms)
        if inj.kind == "gun":
            neg = -(j + 1)
            gun_windows.append((on, off, inj.location, neg))
            truth.agents[neg] = AgentTruth(neg, "gun", on, off, 0.0, 0.0)
            inj_truth.append(InjectionTruth("gun", on, off, inj.location,
                                            (neg,)))
        else:
            n_actors = 2 if inj.kind == "fight" else inj.size
            involved = []
            for k in range(n_actors):
                aid += 1
                involved.append(aid)
                spawns.append((on, aid, inj.kind, None, (inj.location, off)))
            inj_truth.append(InjectionTruth(inj.kind, on, off, inj.location,
                                            tuple(involved)))
    truth.injections = sorted(inj_truth, key=lambda i: (i.t_on_ms, i.kind))
    spawns.sort(key=lambda s: (s[0], s[1]))

    agents = {}
    vis_open = {}
    spawn_i = 0
    traj_every = max(1, int(round(config.fps)))
    t_prev = None

    def close_vis(key, t):
        on = vis_open.pop(key)
        if t > on:
            truth.visibility.setdefault(key, []).append([on, t])

    for k in range(config.n_frames):
        t_ms = config.frame_ms(k)

        while spawn_i < len(spawns) and spawns[spawn_i][0] <= t_ms:
            _, a, kind, script, inj_info = spawns[spawn_i]
            spawn_i += 1
            if kind == "scripted":
                h, aspect, stride, amp, ty, tx, speed = _draw_body(
                    rng_m, height_m=script.height_m, speed=script.speed_m,
                    speed_mean=config.walk_speed_mean,
                    speed_std=config.walk_speed_std)
                ag = _Agent(a, "scripted", script.waypoints[0], speed,
                            (h, aspect, stride, amp, ty, tx), script=script)
            elif kind == "walker":
                h, aspect, stride, amp, ty, tx, speed = _draw_body(
                    rng_m, speed_mean=config.walk_speed_mean,
                    speed_std=config.walk_speed_std)
                (x0, y0), (x1, y1) = extent
                pos = (rng_m.uniform(x0, x1), rng_m.uniform(y0, y1))
                ag = _Agent(a, "walker", pos, speed,
                            (h, aspect, stride, amp, ty, tx))
            else:
                loc, off_ms = inj_info
                h, aspect, stride, amp, ty, tx, speed = _draw_body(
                    rng_m, speed_mean=config.walk_speed_mean,
                    speed_std=config.walk_speed_std)
                jx = rng_m.uniform(-1.0, 1.0)
                jy = rng_m.uniform(-1.0, 1.0)
                pos = (loc[0] + jx, loc[1] + jy)
                if kind == "fight":
                    ag = _Agent(a, "fight", pos, 0.0,
                                (h, aspect, stride, amp, ty, tx),
                                despawn_ms=off_ms)
                else:
                    ag = _Agent(a, "crowd", pos, speed,
                                (h, aspect, stride, amp, ty, tx),
                                anchor=loc, despawn_ms=off_ms)
            agents[a] = ag
            truth.agents[a] = AgentTruth(a, ag.kind, t_ms,
                                         ag.despawn_ms or end_ms,
                                         ag.height_m, ag.speed)

        for a in [a for a in sorted(agents)
                  if agents[a].despawn_ms is not None
                  and t_ms >= agents[a].despawn_ms]:
            for cam in cams:
                if (a, cam.camera_id) in vis_open:
                    close_vis((a, cam.camera_id), agents[a].despawn_ms)
            del agents[a]

        if t_prev is not None:
            dt_s = (t_ms - t_prev) / 1000.0
            for a in sorted(agents):
                agents[a].advance(dt_s, rng_m, extent)
        t_prev = t_ms

        if k % traj_every == 0:
            for a in sorted(agents):
                truth.trajectories.setdefault(a, []).append(
                    (t_ms, round(agents[a].pos[0], 4),
                     round(agents[a].pos[1], 4)))

        for cam in cams:
            ids = []
            dets = [] if render else None
            for a in sorted(agents):
                ag = agents[a]
                placed = cam.place(ag.pos[0], ag.pos[1], ag.height_m,
                                   ag.aspect)
                key = (a, cam.camera_id)
                if placed is None:
                    if key in vis_open:
                        close_vis(key, t_ms)
                    continue
                if key not in vis_open:
                    vis_open[key] = t_ms
                if config.noise.miss_probability > 0.0 \
                        and rng_m.random() < config.noise.miss_probability:
                    continue
                ids.append(a)
                if render:
                    det = render_camera(ag, cam, config.noise, rng_n)
                    # place() succeeded, so the render cannot miss.
                    dets.append(det)
            for on, off, loc, neg in gun_windows:
                if on <= t_ms < off:
                    key = (neg, cam.camera_id)
                    det = _render_gun(loc, cam)
                    if det is None:
                        if key in vis_open:
                            close_vis(key, t_ms)
                        continue
                    if key not in vis_open:
                        vis_open[key] = t_ms
                    ids.append(neg)
                    if render:
                        dets.append(det)
                elif t_ms >= off and (neg, cam.camera_id) in vis_open:
                    close_vis((neg, cam.camera_id), off)
            truth.frame_agents[cam.camera_id].append(tuple(ids))
            if render:
                dip = config.noise.occlusion_dip
                if dip is not None and len(dets) > 1:
                    boxes = [d.bbox for d in dets]
                    person = [d.cls == CLASS_PERSON for d in dets]
                    for i in range(len(dets)):
                        if not person[i]:
                            continue
                        for j in range(len(dets)):
                            if i != j and person[j] and _iou(
                                    boxes[i], boxes[j]) \
                                    > config.noise.occlusion_iou:
                                dets[i] = replace(dets[i], confidence=dip)
                                break
                yield DetectionEvent(camera_id=cam.camera_id,
                                     site_id=config.site_id,
                                     timestamp=t_ms, frame_index=k,
                                     detections=tuple(dets))

    for key in sorted(vis_open, key=lambda kk: (kk[0], kk[1])):
        on = vis_open[key]
        if end_ms > on:
            truth.visibility.setdefault(key, []).append([on, end_ms])
    vis_open.clear()
    return truth


class EventStream:
    """Re-iterable deterministic stream; every pass replays byte-identically."""

    def __init__(self, config):
        self.config = config

    def __iter__(self):
        return _drive(self.config, render=True)


def generate(config):
    """Build (event stream, ground truth) for a scenario.

    The truth is complete immediately (computed by a render-free pass);
    the stream lazily re-runs the same seeded simulation with rendering.
    """
    gen = _drive(config, render=False)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return EventStream(config), stop.value


@dataclass
class SystemOutputs:
    """What the system under test produced, in ground-truth-joinable form."""
    run_id: str
    assignments: list = field(default_factory=list)
    # (camera_id, frame_index, det_index, track_id)
    bindings: list = field(default_factory=list)
    # (t_ms, camera_id, track_id, global_id, epoch_id)
    alerts: list = field(default_factory=list)
    occupancy: list = field(default_factory=list)  # OccupancySnapshot


@dataclass(frozen=True)
class SimMetrics:
    id_switches: int
    cross_camera_pairing_accuracy: float
    covis_intervals: int
    alert_precision: float
    alert_recall: float
    zero_predictions: bool
    occupancy_error_mean: float
    occupancy_error_max: float

    def __post_init__(self):
        if self.id_switches < 0:
            raise ValueError("id_switches must be nonnegative")
        for name in ("cross_camera_pairing_accuracy", "alert_precision",
                     "alert_recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def perfect_outputs(truth):
    """Ground truth echoed back as system output; the metric fixed point."""
    from .scoring import EmergencyAlert, KIND_SEVERITY

    out = SystemOutputs(run_id=truth.run_id)
    for cam, rows in truth.frame_agents.items():
        for frame, ids in enumerate(rows):
            for det_idx, a in enumerate(ids):
                if a > 0:
                    out.assignments.append((cam, frame, det_idx, a))
    for (a, cam), spans in truth.visibility.items():
        if a > 0 and spans:
            out.bindings.append((spans[0][0], cam, a, a, 1))
    for i, inj in enumerate(truth.injections):
        kind = INJECTION_ALERT_KIND[inj.kind]
        cam = truth.camera_ids[0]
        out.alerts.append(EmergencyAlert(
            alert_id=f"gt-{i}", kind=kind, camera_id=cam,
            site_id=truth.site_id, record_time=inj.t_on_ms,
            severity=KIND_SEVERITY[kind], score=1.0,
            global_ids=tuple(x for x in inj.involved if x > 0),
            detail=f"truth {inj.kind}"))
    return out


def evaluate(outputs, truth, *, tolerance_s=5.0, min_covis_s=3.0,
             occupancy_window_ms=5000):
    """Score system outputs against ground truth."""
    if outputs.run_id != truth.run_id:
        raise MismatchedRun(
            f"outputs from {outputs.run_id}, truth from {truth.run_id}")

    # Identity switches: per (camera, agent), frame-ordered matched tracks.
    per_agent = {}
    track_hist = {}
    for cam, frame, det_idx, tid in sorted(outputs.assignments,
                                           key=lambda r: (r[0], r[1])):
        a = truth.agent_for(cam, frame, det_idx)
        if a < 0:
            continue
        per_agent.setdefault((cam, a), []).append(tid)
        track_hist.setdefault((cam, tid), []).append((frame, a))
    switches = 0
    for seq in per_agent.values():
        for prev, cur in zip(seq, seq[1:]):
            if cur != prev:
                switches += 1

    # Pairing: a co-visibility interval succeeds when some epoch binds the
    # agent to the same global id in both cameras by the interval's end.
    agent_bindings = {}
    for t, cam, tid, gid, epoch in outputs.bindings:
        hist = track_hist.get((cam, tid))
        if not hist or gid is None:
            continue
        frames = [f for f, _ in hist]
        i = bisect_right(frames, _frame_at(truth, t)) - 1
        if i < 0:
            i = 0
        a = hist[i][1]
        agent_bindings.setdefault((a, cam), []).append((t, epoch, gid))
    intervals = truth.covisibility(round(min_covis_s * 1000))
    paired = 0
    for a, ca, cb, lo, hi in intervals:
        ea = _epoch_gids(agent_bindings.get((a, ca), ()), hi + 1000)
        eb = _epoch_gids(agent_bindings.get((a, cb), ()), hi + 1000)
        if any(ea.get(ep) == gid for ep, gid in eb.items()
               if ep in ea and gid is not None):
            paired += 1
    accuracy = paired / len(intervals) if intervals else 1.0

    # Alerts vs injections, window [onset - tol, offset + tol].
    tol = round(tolerance_s * 1000)
    mapped = set(INJECTION_ALERT_KIND.values())
    relevant = [al for al in outputs.alerts if al.kind in mapped]
    matched_inj = 0
    matched_alerts = 0
    for inj in truth.injections:
        want = INJECTION_ALERT_KIND[inj.kind]
        if any(al.kind == want
               and inj.t_on_ms - tol <= al.record_time <= inj.t_off_ms + tol
               for al in relevant):
            matched_inj += 1
    for al in relevant:
        if any(al.kind == INJECTION_ALERT_KIND[inj.kind]
               and inj.t_on_ms - tol <= al.record_time <= inj.t_off_ms + tol
               for inj in truth.injections):
            matched_alerts += 1
    recall = matched_inj / len(truth.injections) if truth.injections else 1.0
    zero_pred = len(relevant) == 0
    precision = matched_alerts / len(relevant) if relevant else 1.0

    errs = []
    for snap in outputs.occupancy:
        expect = {a for a in truth.visible_agents(
            snap.camera_id, snap.window_end - occupancy_window_ms,
            snap.window_end) if a > 0}
        errs.append(abs(snap.count - len(expect)))
    return SimMetrics(
        id_switches=switches,
        cross_camera_pairing_accuracy=accuracy,
        covis_intervals=len(intervals),
        alert_precision=precision,
        alert_recall=recall,
        zero_predictions=zero_pred,
        occupancy_error_mean=float(np.mean(errs)) if errs else 0.0,
        occupancy_error_max=float(max(errs)) if errs else 0.0,
    )


def _frame_at(truth, t_ms):
    return int(round(t_ms * truth.fps / 1000.0))


def _epoch_gids(bindings, t_max):
    """Latest gid per epoch among bindings at or before t_max."""
    out = {}
    for t, epoch, gid in sorted(bindings):
        if t <= t_max:
            out[epoch] = gid
    return out
