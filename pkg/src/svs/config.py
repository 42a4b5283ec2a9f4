"""One TOML file per node, validated exhaustively at load.

Every key is checked for type and range, unknown keys are rejected, and
cross-field constraints are enforced here so a config accepted at startup
never causes a constraint error later. Errors carry the full field path.

Environment overrides exist for credentials only: SVS_GATEWAY_TOKEN and
SVS_ADMIN_TOKEN replace the corresponding token fields when set. Nothing
else is read from the environment; topology belongs in the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:   # 3.10: same parser, published separately
    import tomli as tomllib

from .errors import ConfigInvalid, SchemaViolation
from .gateway import DEFAULT_SPOOL_CAPACITY, RoutingTable
from .model import CameraCalibration
from .pipeline import EdgeSettings
from .reid import ReidConfig
from .scoring import (
    ANOMALY_DEDUP_MS,
    DEFAULT_HALF_LIFE_MS,
    DEFAULT_KAPPA,
    EmergencyRuleSet,
)
from .simulator import (
    AgentScript,
    DetectionNoise,
    Injection,
    InvalidConfig,
    ScenarioConfig,
)
from .store import RetentionPolicy
from .tracker import AssociationConfig

ENV_GATEWAY_TOKEN = "SVS_GATEWAY_TOKEN"
ENV_ADMIN_TOKEN = "SVS_ADMIN_TOKEN"

ROLES = ("edge", "cloud")
LOG_LEVELS = ("debug", "info", "warning", "error")

_MISSING = object()


class _Sect:
    """Consuming view of one TOML table: every read pops its key and
    done() rejects whatever was not consumed, so an unknown or misspelled
    key cannot pass silently."""

    def __init__(self, obj, path):
        if not isinstance(obj, dict):
            raise ConfigInvalid(f"{path}: must be a table")
        self._d = dict(obj)
        self.path = path

    def _pop(self, key, default):
        if key not in self._d:
            if default is _MISSING:
                raise ConfigInvalid(f"{self.path}.{key}: required")
            return False, default
        return True, self._d.pop(key)

    def take_str(self, key, default=_MISSING, *, nonempty=True):
        present, v = self._pop(key, default)
        if not present:
            return v
        if not isinstance(v, str) or (nonempty and not v):
            raise ConfigInvalid(f"{self.path}.{key}: must be a "
                                f"{'nonempty ' if nonempty else ''}string")
        return v

    def take_int(self, key, default=_MISSING, *, lo=None, hi=None):
        present, v = self._pop(key, default)
        if not present:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigInvalid(f"{self.path}.{key}: must be an integer")
        if lo is not None and v < lo:
            raise ConfigInvalid(f"{self.path}.{key}: must be >= {lo}")
        if hi is not None and v > hi:
            raise ConfigInvalid(f"{self.path}.{key}: must be <= {hi}")
        return v

    def take_float(self, key, default=_MISSING, *, lo=None, lo_open=False):
        present, v = self._pop(key, default)
        if not present:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigInvalid(f"{self.path}.{key}: must be a number")
        v = float(v)
        if lo is not None and (v <= lo if lo_open else v < lo):
            op = ">" if lo_open else ">="
            raise ConfigInvalid(f"{self.path}.{key}: must be {op} {lo}")
        return v

    def take_bool(self, key, default=_MISSING):
        present, v = self._pop(key, default)
        if not present:
            return v
        if not isinstance(v, bool):
            raise ConfigInvalid(f"{self.path}.{key}: must be a boolean")
        return v

    def take_list(self, key, default=_MISSING):
        present, v = self._pop(key, default)
        if not present:
            return v
        if not isinstance(v, list):
            raise ConfigInvalid(f"{self.path}.{key}: must be an array")
        return v

    def take_table(self, key, default=_MISSING):
        present, v = self._pop(key, default)
        if not present:
            return v
        if not isinstance(v, dict):
            raise ConfigInvalid(f"{self.path}.{key}: must be a table")
        return v

    def take_sect(self, key, *, required=False):
        present, v = self._pop(key, _MISSING if required else None)
        if not present or v is None:
            return None
        return _Sect(v, f"{self.path}.{key}")

    def done(self):
        if self._d:
            k = sorted(self._d)[0]
            raise ConfigInvalid(f"{self.path}.{k}: unknown key")


def _pair(v, path):
    if not (isinstance(v, list) and len(v) == 2
            and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                    for x in v)):
        raise ConfigInvalid(f"{path}: must be a pair of numbers")
    return (float(v[0]), float(v[1]))


def _extent(v, path):
    if not (isinstance(v, list) and len(v) == 2):
        raise ConfigInvalid(f"{path}: must be [[x0, y0], [x1, y1]]")
    (x0, y0), (x1, y1) = (_pair(v[0], path), _pair(v[1], path))
    if not (x1 > x0 and y1 > y0):
        raise ConfigInvalid(f"{path}: must span positive area")
    return ((x0, y0), (x1, y1))


def _camera(item, path, site_id):
    s = _Sect(item, path)
    cam_id = s.take_str("id")
    width = s.take_int("width", lo=1)
    height = s.take_int("height", lo=1)
    h = s.take_list("homography")
    s.done()
    if len(h) != 9 or any(isinstance(x, bool)
                          or not isinstance(x, (int, float)) for x in h):
        raise ConfigInvalid(f"{path}.homography: must be 9 numbers")
    try:
        return CameraCalibration(camera_id=cam_id, site_id=site_id,
                                 image_width=width, image_height=height,
                                 homography=tuple(float(x) for x in h))
    except SchemaViolation as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc


def _cameras(items, path, site_id):
    if not isinstance(items, list) or not items:
        raise ConfigInvalid(f"{path}: at least one camera is required")
    calibs = {}
    for i, item in enumerate(items):
        cal = _camera(item, f"{path}[{i}]", site_id)
        if cal.camera_id in calibs:
            raise ConfigInvalid(
                f"{path}[{i}].id: duplicate camera {cal.camera_id!r}")
        calibs[cal.camera_id] = cal
    return calibs


@dataclass(frozen=True)
class UplinkConfig:
    host: str
    port: int
    token: str
    spool_capacity: int = DEFAULT_SPOOL_CAPACITY


@dataclass(frozen=True)
class ScoringConfig:
    half_life_ms: int = DEFAULT_HALF_LIFE_MS
    kappa: float = DEFAULT_KAPPA


@dataclass(frozen=True)
class AnalyticsConfig:
    window_ms: int = 5_000
    pane_ms: int = 5 * 60_000
    cell_m: float = 0.5
    extent: tuple = ((-50.0, -50.0), (50.0, 50.0))


@dataclass(frozen=True)
class IngestConfig:
    host: str
    port: int
    queue_size: int = 256
    max_skew_ms: int = 500

    @property
    def address(self):
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class EdgeConfig:
    site_id: str
    calibrations: dict
    settings: EdgeSettings
    assoc: AssociationConfig
    reid: ReidConfig
    scoring: ScoringConfig
    rules: EmergencyRuleSet
    dedup_ms: int
    retention: RetentionPolicy
    analytics: AnalyticsConfig
    store_dir: Optional[str] = None
    capture_path: Optional[str] = None
    uplink: Optional[UplinkConfig] = None
    ingest: Optional[IngestConfig] = None
    reid_seed: Optional[int] = None


@dataclass(frozen=True)
class CloudConfig:
    listen_host: str
    listen_port: int
    api_host: str
    api_port: int
    gateway_token: str
    routing: RoutingTable
    tables: tuple
    state_dir: Optional[str] = None
    admin_token: Optional[str] = None


@dataclass(frozen=True)
class NodeConfig:
    role: str
    log_level: str
    edge: Optional[EdgeConfig] = None
    cloud: Optional[CloudConfig] = None


def _parse_edge(sect, env):
    site_id = sect.take_str("site")
    calibs = _cameras(sect.take_list("camera"), f"{sect.path}.camera",
                      site_id)

    settings = EdgeSettings(
        record_interval_ms=sect.take_int("record_interval_ms", 1000, lo=1),
        occupancy_interval_ms=sect.take_int("occupancy_interval_ms", 5000,
                                            lo=1),
        purge_interval_ms=sect.take_int("purge_interval_ms", 0, lo=0))

    a = sect.take_sect("association")
    if a is None:
        assoc = AssociationConfig()
    else:
        assoc = AssociationConfig(
            det_high=a.take_float("det_high", 0.6),
            det_low=a.take_float("det_low", 0.1),
            iou_gate_stage1=a.take_float("iou_gate_stage1", 0.2),
            iou_gate_stage2=a.take_float("iou_gate_stage2", 0.5),
            init_confidence=a.take_float("init_confidence", 0.7),
            max_lost_frames=a.take_int("max_lost_frames", 30, lo=1))
        a.done()

    r = sect.take_sect("reid")
    if r is None:
        reid = ReidConfig()
    else:
        reid = ReidConfig(
            min_window=r.take_int("min_window", ReidConfig.min_window),
            min_avg_joints=r.take_float("min_avg_joints",
                                        ReidConfig.min_avg_joints),
            tau=r.take_float("tau", ReidConfig.tau),
            max_exemplars=r.take_int("max_exemplars",
                                     ReidConfig.max_exemplars),
            rotation_period_ms=r.take_int("rotation_period_ms",
                                          ReidConfig.rotation_period_ms))
        r.done()

    sc = sect.take_sect("scoring")
    if sc is None:
        scoring = ScoringConfig()
    else:
        scoring = ScoringConfig(
            half_life_ms=sc.take_int("half_life_ms", DEFAULT_HALF_LIFE_MS,
                                     lo=1),
            kappa=sc.take_float("kappa", DEFAULT_KAPPA, lo=0.0,
                                lo_open=True))
        sc.done()

    ru = sect.take_sect("rules")
    dedup_ms = ANOMALY_DEDUP_MS
    if ru is None:
        rules = EmergencyRuleSet()
    else:
        watchlist = ru.take_list("watchlist", None)
        threshold = ru.take_float("anomaly_threshold", 0.9)
        dedup_ms = ru.take_int("dedup_ms", ANOMALY_DEDUP_MS, lo=0)
        limits = ru.take_table("occupancy_limit", {})
        ru.done()
        for cam in limits:
            if cam not in calibs:
                raise ConfigInvalid(
                    f"{ru.path}.occupancy_limit.{cam}: unknown camera")
        kwargs = dict(anomaly_threshold=threshold, occupancy_limit=limits)
        if watchlist is not None:
            kwargs["object_watchlist"] = watchlist
        rules = EmergencyRuleSet(**kwargs)

    re_ = sect.take_sect("retention")
    if re_ is None:
        retention = RetentionPolicy()
    else:
        retention = RetentionPolicy(
            identity_ttl_ms=re_.take_int("identity_ttl_ms",
                                         RetentionPolicy.identity_ttl_ms),
            aggregate_ttl_ms=re_.take_int("aggregate_ttl_ms",
                                          RetentionPolicy.aggregate_ttl_ms),
            heatmaps_enabled=re_.take_bool("heatmaps", True))
        re_.done()

    an = sect.take_sect("analytics")
    if an is None:
        analytics = AnalyticsConfig()
    else:
        extent_raw = an.take_list("extent", None)
        analytics = AnalyticsConfig(
            window_ms=an.take_int("window_ms", 5_000, lo=1),
            pane_ms=an.take_int("pane_ms", 5 * 60_000, lo=1),
            cell_m=an.take_float("cell_m", 0.5, lo=0.0, lo_open=True),
            extent=(AnalyticsConfig.extent if extent_raw is None
                    else _extent(extent_raw, f"{an.path}.extent")))
        an.done()

    up = sect.take_sect("uplink")
    uplink = None
    if up is not None:
        file_token = up.take_str("token", "", nonempty=False)
        token = env.get(ENV_GATEWAY_TOKEN) or file_token
        uplink = UplinkConfig(
            host=up.take_str("host"),
            port=up.take_int("port", lo=1, hi=65535),
            token=token,
            spool_capacity=up.take_int("spool", DEFAULT_SPOOL_CAPACITY,
                                       lo=1))
        up.done()
        if not token:
            raise ConfigInvalid(
                f"{sect.path}.uplink.token: required (or set "
                f"{ENV_GATEWAY_TOKEN})")

    ig = sect.take_sect("ingest")
    ingest = None
    if ig is not None:
        ingest = IngestConfig(
            host=ig.take_str("host", "127.0.0.1"),
            port=ig.take_int("port", lo=1, hi=65535),
            queue_size=ig.take_int("queue_size", 256, lo=1),
            max_skew_ms=ig.take_int("max_skew_ms", 500, lo=0))
        ig.done()

    store_dir = sect.take_str("store_dir", None)
    capture_path = sect.take_str("capture_path", None)
    reid_seed = sect.take_int("reid_seed", None)
    sect.done()

    if settings.purge_interval_ms and store_dir is None:
        raise ConfigInvalid(
            f"{sect.path}.purge_interval_ms: needs store_dir to purge")
    if uplink is None and capture_path is None:
        raise ConfigInvalid(
            f"{sect.path}: needs an [edge.uplink] or a capture_path")

    return EdgeConfig(site_id=site_id, calibrations=calibs,
                      settings=settings, assoc=assoc, reid=reid,
                      scoring=scoring, rules=rules, dedup_ms=dedup_ms,
                      retention=retention, analytics=analytics,
                      store_dir=store_dir, capture_path=capture_path,
                      uplink=uplink, ingest=ingest, reid_seed=reid_seed)


def _parse_cloud(sect, env):
    routing_raw = sect.take_table("routing")
    if not routing_raw:
        raise ConfigInvalid(f"{sect.path}.routing: must map topic "
                            "patterns to tables")
    for pat, dest in routing_raw.items():
        if not isinstance(dest, str) or not dest:
            raise ConfigInvalid(
                f"{sect.path}.routing.{pat}: destination must be a "
                "nonempty string")

    tables_raw = sect.take_list("tables")
    if not tables_raw or not all(isinstance(t, str) and t
                                 for t in tables_raw):
        raise ConfigInvalid(
            f"{sect.path}.tables: must be nonempty strings")
    tables = tuple(tables_raw)
    for pat, dest in routing_raw.items():
        if dest not in tables:
            raise ConfigInvalid(
                f"{sect.path}.routing.{pat}: destination {dest!r} is not "
                "a declared table")

    alert_channel = sect.take_str("alert_channel", "alerts")
    routing = RoutingTable(dict(routing_raw), alert_channel=alert_channel)

    file_gw = sect.take_str("gateway_token", "", nonempty=False)
    gateway_token = env.get(ENV_GATEWAY_TOKEN) or file_gw
    if len(gateway_token) < 32:
        raise ConfigInvalid(
            f"{sect.path}.gateway_token: at least 32 characters required "
            f"(or set {ENV_GATEWAY_TOKEN})")

    file_admin = sect.take_str("admin_token", None)
    admin_token = env.get(ENV_ADMIN_TOKEN) or file_admin
    if admin_token is not None and len(admin_token) < 32:
        raise ConfigInvalid(
            f"{sect.path}.admin_token: at least 32 characters required")

    cfg = CloudConfig(
        listen_host=sect.take_str("listen_host", "127.0.0.1"),
        listen_port=sect.take_int("listen_port", lo=0, hi=65535),
        api_host=sect.take_str("api_host", "127.0.0.1"),
        api_port=sect.take_int("api_port", lo=0, hi=65535),
        gateway_token=gateway_token,
        routing=routing, tables=tables,
        state_dir=sect.take_str("state_dir", None),
        admin_token=admin_token)
    sect.done()
    return cfg


def parse_config(data, env=None) -> NodeConfig:
    """Validate a parsed TOML document into a NodeConfig.

    env supplies credential overrides; it defaults to the process
    environment and nothing beyond the SVS_* credential names is read.
    """
    env = os.environ if env is None else env
    root = _Sect(data, "config")
    node = root.take_sect("node", required=True)
    if node is None:
        raise ConfigInvalid("config.node: required")
    role = node.take_str("role")
    if role not in ROLES:
        raise ConfigInvalid(f"node.role: must be one of {list(ROLES)}")
    log_level = node.take_str("log_level", "info")
    if log_level not in LOG_LEVELS:
        raise ConfigInvalid(
            f"node.log_level: must be one of {list(LOG_LEVELS)}")
    node.done()

    edge_sect = root.take_sect("edge")
    cloud_sect = root.take_sect("cloud")
    root.done()
    if role == "edge":
        if edge_sect is None:
            raise ConfigInvalid("edge: section required for role = 'edge'")
        if cloud_sect is not None:
            raise ConfigInvalid(
                "cloud: section not allowed for an edge node")
        return NodeConfig(role=role, log_level=log_level,
                          edge=_parse_edge(edge_sect, env))
    if cloud_sect is None:
        raise ConfigInvalid("cloud: section required for role = 'cloud'")
    if edge_sect is not None:
        raise ConfigInvalid("edge: section not allowed for a cloud node")
    return NodeConfig(role=role, log_level=log_level,
                      cloud=_parse_cloud(cloud_sect, env))


def load_config(path, env=None) -> NodeConfig:
    """Parse and validate a node config file. Relative paths inside the
    file resolve against the file's directory, not the process cwd."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config {path}: {exc}") from exc
    cfg = parse_config(data, env=env)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    if cfg.edge is not None:
        object.__setattr__(cfg.edge, "store_dir",
                           resolve(cfg.edge.store_dir))
        object.__setattr__(cfg.edge, "capture_path",
                           resolve(cfg.edge.capture_path))
    if cfg.cloud is not None:
        object.__setattr__(cfg.cloud, "state_dir",
                           resolve(cfg.cloud.state_dir))
    return cfg


# -- scenario files ----------------------------------------------------------

def parse_scenario(data) -> ScenarioConfig:
    """Validate a parsed scenario document into a ScenarioConfig."""
    root = _Sect(data, "scenario")
    sc = root.take_sect("scenario", required=True)
    if sc is None:
        raise ConfigInvalid("scenario.scenario: required")
    site_id = sc.take_str("site", "s1")
    seed = sc.take_int("seed")
    duration_s = sc.take_float("duration_s", lo=0.0, lo_open=True)
    fps = sc.take_float("fps", 15.0, lo=0.0, lo_open=True)
    agent_count = sc.take_int("agent_count", 0, lo=0)
    spawn_interval_s = sc.take_float("spawn_interval_s", 0.0, lo=0.0)
    walk_speed_mean = sc.take_float("walk_speed_mean", 1.4)
    walk_speed_std = sc.take_float("walk_speed_std", 0.2)
    extent_raw = sc.take_list("extent", None)
    sc.done()

    calibs = _cameras(root.take_list("camera"), "scenario.camera", site_id)

    try:
        ns = root.take_sect("noise")
        if ns is None:
            noise = DetectionNoise()
        else:
            noise = DetectionNoise(
                bbox_jitter_px=ns.take_float("bbox_jitter_px", 0.0),
                keypoint_jitter_px=ns.take_float("keypoint_jitter_px", 0.0),
                miss_probability=ns.take_float("miss_probability", 0.0),
                conf_mean=ns.take_float("conf_mean", 0.9),
                conf_std=ns.take_float("conf_std", 0.0),
                occlusion_dip=ns.take_float("occlusion_dip", None),
                occlusion_iou=ns.take_float("occlusion_iou", 0.3))
            ns.done()

        scripts = []
        for i, item in enumerate(root.take_list("script", []) or []):
            s = _Sect(item, f"script[{i}]")
            wps = s.take_list("waypoints")
            scripts.append(AgentScript(
                waypoints=tuple(_pair(w, f"script[{i}].waypoints[{j}]")
                                for j, w in enumerate(wps)),
                speed_m=s.take_float("speed_m", None),
                height_m=s.take_float("height_m", None),
                spawn_s=s.take_float("spawn_s", 0.0)))
            s.done()

        injections = []
        for i, item in enumerate(root.take_list("injection", []) or []):
            s = _Sect(item, f"injection[{i}]")
            injections.append(Injection(
                kind=s.take_str("kind"),
                t_s=s.take_float("t_s"),
                location=_pair(s.take_list("location"),
                               f"injection[{i}].location"),
                duration_s=s.take_float("duration_s", None),
                size=s.take_int("size", 8)))
            s.done()
        root.done()

        kwargs = dict(seed=seed, duration_s=duration_s, fps=fps,
                      site_id=site_id, cameras=tuple(calibs.values()),
                      agent_count=agent_count,
                      spawn_interval_s=spawn_interval_s,
                      walk_speed_mean=walk_speed_mean,
                      walk_speed_std=walk_speed_std,
                      noise=noise, scripted=tuple(scripts),
                      injections=tuple(injections))
        if extent_raw is not None:
            kwargs["site_extent"] = _extent(extent_raw, "scenario.extent")
        return ScenarioConfig(**kwargs)
    except InvalidConfig as exc:
        raise ConfigInvalid(f"scenario: {exc}") from exc


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"scenario {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"scenario {path}: {exc}") from exc
    return parse_scenario(data)
