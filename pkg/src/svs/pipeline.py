"""Edge pipeline: validated detection events in, de-identified analytics
out through the local store and the cloud gateway.

One EdgePipeline owns the per-camera trackers plus the shared site state
(re-identification, scoring baselines, rules, aggregates). process() is
safe to call concurrently for different cameras; everything site-wide
runs under one lock so no alert or rotation can interleave mid-step.
"""
import threading
from dataclasses import dataclass

from .analytics import AnalyticsEngine, occupancy_indicator
from .errors import (
    ConfigInvalid,
    DegeneratePose,
    DegenerateProjection,
    InsufficientObservations,
    UnknownCamera,
)
from .ingest import Dispatcher, LogicalClock, pump
from .model import AnalyticsRecord
from .reid import GlobalReid, ReidConfig
from .scoring import (
    BaselineAnomalyScorer,
    RuleEngine,
    classify_action,
    kinematics,
)
from .store import bucket_index
from .tracker import CameraTracker

DEFAULT_RECORD_INTERVAL_MS = 1000
DEFAULT_OCCUPANCY_INTERVAL_MS = 5000


@dataclass(frozen=True)
class EdgeSettings:
    """Cadence knobs for the edge loop; all in event time."""

    record_interval_ms: int = DEFAULT_RECORD_INTERVAL_MS
    occupancy_interval_ms: int = DEFAULT_OCCUPANCY_INTERVAL_MS
    purge_interval_ms: int = 0   # 0 disables inline retention sweeps

    def __post_init__(self):
        if self.record_interval_ms <= 0:
            raise ConfigInvalid("edge.record_interval_ms must be positive")
        if self.occupancy_interval_ms <= 0:
            raise ConfigInvalid("edge.occupancy_interval_ms must be positive")
        if self.purge_interval_ms < 0:
            raise ConfigInvalid("edge.purge_interval_ms must be nonnegative")


class EdgePipeline:
    """track -> re-identify -> score -> aggregate -> rule-check -> publish.

    Analytics records are minted at most once per record_interval_ms per
    (camera, global id); occupancy closes per camera every
    occupancy_interval_ms. Identity rows go to the local store only;
    everything published outward is wire-schema material.
    """

    def __init__(self, site_id, calibrations, gateway, *, store=None,
                 policy=None, reid=None, scorer=None, rules=None,
                 assoc=None, analytics=None, settings=None, reid_seed=None):
        if not calibrations:
            raise ConfigInvalid("edge needs at least one camera")
        self.site_id = site_id
        self.calibrations = dict(calibrations)
        self.gateway = gateway
        self.store = store
        self.policy = policy
        if store is not None and policy is None:
            raise ConfigInvalid("a store requires a retention policy")
        self.settings = settings or EdgeSettings()
        self.trackers = {cam: CameraTracker(cam, assoc)
                         for cam in self.calibrations}
        if isinstance(reid, GlobalReid):
            self.reid = reid
        else:
            self.reid = GlobalReid(site_id, self.calibrations,
                                   reid or ReidConfig(), seed=reid_seed)
        self.scorer = scorer or BaselineAnomalyScorer()
        self.rules = rules if isinstance(rules, RuleEngine) \
            else RuleEngine(site_id, rules)
        self.analytics = analytics or AnalyticsEngine(site_id,
                                                      self.calibrations)
        self.clock = LogicalClock()
        self._site = threading.Lock()
        self._last_record = {}   # (camera_id, global_id) -> t
        self._last_tick = {}     # camera_id -> t
        self._next_purge = None
        self.records_minted = 0
        self.alerts_raised = 0

    def handlers(self):
        """Per-camera callables for a Dispatcher."""
        return {cam: self.process for cam in self.calibrations}

    def process(self, event):
        """Run one camera frame end to end; returns the records minted."""
        cam = event.camera_id
        tracker = self.trackers.get(cam)
        if tracker is None:
            raise UnknownCamera(cam)
        calib = self.calibrations[cam]
        t = event.timestamp
        outputs = tracker.step(list(event.detections), t, event.frame_index)
        by_id = {tr.track_id: tr for tr in tracker.tracks}

        with self._site:
            now = self.clock.advance(t)
            self.reid.maybe_rotate(now)

            records = []
            for out in outputs:
                track = by_id.get(out.track_id)
                if track is None:
                    continue
                gid = self.reid.observe_track(cam, track)
                if gid is None:
                    continue
                last = self._last_record.get((cam, gid))
                if last is not None \
                        and t - last < self.settings.record_interval_ms:
                    continue
                window = list(track.history)
                try:
                    feats = kinematics(window, calib)
                except (InsufficientObservations, DegeneratePose,
                        DegenerateProjection):
                    continue
                score = self.scorer.score(cam, feats, t)
                action = classify_action(window, calib)
                record = AnalyticsRecord(global_id=gid, camera_id=cam,
                                         record_time=t, bbox=out.bbox,
                                         anomaly_score=score, action=action)
                records.append(record)
                self._last_record[(cam, gid)] = t
                self.analytics.observe(cam, gid, t, out.bbox)
                if self.store is not None:
                    self.store.insert(record)

            snapshot = indicator = None
            panes = ()
            occupancy = None
            last_tick = self._last_tick.get(cam)
            if last_tick is None \
                    or t - last_tick >= self.settings.occupancy_interval_ms:
                result = self.analytics.tick(cam, t)
                snapshot = result.snapshot
                baseline = None
                if self.store is not None:
                    baseline = self.store.baseline_for(
                        cam, bucket_index(t), now_ms=t)
                indicator = occupancy_indicator(snapshot, baseline)
                panes = result.completed_panes
                occupancy = snapshot.count
                self._last_tick[cam] = t

            alerts = self.rules.evaluate_rules(event, records,
                                               occupancy=occupancy)
            # alerts first: the spool is FIFO and these are the
            # latency-bounded messages
            for alert in alerts:
                self.gateway.publish(alert)
            if records:
                self.gateway.publish(records)
            if snapshot is not None:
                self.gateway.publish(snapshot, indicator)
            for pane in panes:
                self.gateway.publish(pane)

            self.records_minted += len(records)
            self.alerts_raised += len(alerts)
            self._maybe_purge(now)
        return records

    def _maybe_purge(self, now):
        interval = self.settings.purge_interval_ms
        if interval == 0 or self.store is None:
            return
        if self._next_purge is None:
            self._next_purge = now + interval
            return
        while now >= self._next_purge:
            self.store.purge_expired(now, self.policy)
            self._next_purge += interval

    def close(self):
        """Flush the open heat pane; storage and gateway lifecycles belong
        to the caller."""
        with self._site:
            pane = self.analytics.flush_pane()
            if pane is not None:
                self.gateway.publish(pane)


def replay(pipeline, events, *, stats=None, queue_size=None,
           max_skew_ms=None, workers=False):
    """Drive a whole event stream through the pipeline and close it.

    workers=False keeps everything on the calling thread, which makes
    replays byte-deterministic; workers=True exercises the concurrent
    per-camera path. Returns the ingest stats.
    """
    kwargs = {"workers": workers, "stats": stats}
    if queue_size is not None:
        kwargs["queue_size"] = queue_size
    if max_skew_ms is not None:
        kwargs["max_skew_ms"] = max_skew_ms
    dispatcher = Dispatcher(pipeline.handlers(), **kwargs)
    try:
        pump(events, dispatcher)
    finally:
        dispatcher.close()
    pipeline.close()
    return dispatcher.stats
