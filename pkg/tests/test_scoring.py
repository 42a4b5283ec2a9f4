"""Kinematics, baseline trust/decay, score shape, actions, and rules."""
import math

import numpy as np
import pytest

from svs.errors import ConfigInvalid, InsufficientObservations
from svs.model import BBox, Detection, DetectionEvent, Keypoints
from svs.scoring import (
    ActionThresholds,
    BaselineAnomalyScorer,
    CameraBaseline,
    ConstantScorer,
    EmergencyAlert,
    EmergencyRuleSet,
    KinematicFeatures,
    RuleEngine,
    TRUST_SAMPLES,
    anomaly_score,
    classify_action,
    kinematics,
)

from synth import similarity_calib, walker_window

CALIB = similarity_calib()


def feat(speed=1.3, accel=0.0, jitter=0.01, spread=0.3, aspect=0.38):
    return KinematicFeatures(speed=speed, acceleration=accel,
                             keypoint_jitter=jitter, pose_spread=spread,
                             bbox_aspect=aspect)


def jittered(window, amp_frac, seed=0):
    """Copy a window with every joint displaced by uniform noise of
    amplitude amp_frac * height. Stands in for a flailing template."""
    rng = np.random.default_rng(seed)
    from svs.tracker import Observation
    out = []
    for obs in window:
        h = obs.bbox.h
        pts = obs.keypoints.pts.copy()
        pts[:, :2] += rng.uniform(-amp_frac * h, amp_frac * h,
                                  size=(17, 2))
        out.append(Observation(bbox=obs.bbox, keypoints=Keypoints(pts),
                               timestamp=obs.timestamp))
    return out


class TestKinematics:
    def test_needs_five_observations(self):
        with pytest.raises(InsufficientObservations):
            kinematics(walker_window(CALIB, n=4), CALIB)

    def test_stationary(self):
        f = kinematics(walker_window(CALIB, n=10, speed_m=0.0), CALIB)
        assert f.speed == 0.0
        assert f.acceleration == 0.0
        assert f.keypoint_jitter == 0.0

    def test_constant_velocity_speed(self):
        f = kinematics(walker_window(CALIB, n=20, speed_m=1.4), CALIB)
        assert f.speed == pytest.approx(1.4, abs=0.05)
        assert f.acceleration == pytest.approx(0.0, abs=1e-9)

    def test_aspect_and_spread(self):
        f = kinematics(walker_window(CALIB, n=10), CALIB)
        assert f.bbox_aspect == pytest.approx(0.38, abs=1e-9)
        assert 0.0 < f.pose_spread < 1.0

    def test_walking_translation_is_not_jitter(self):
        # A rigid walker translates but its box-local pose is frozen.
        f = kinematics(walker_window(CALIB, n=20, speed_m=1.3), CALIB)
        assert f.keypoint_jitter < 1e-9

    def test_flailing_template_high_jitter(self):
        walk = kinematics(walker_window(CALIB, n=20, gait_hz=0.75), CALIB)
        fight = kinematics(jittered(walker_window(CALIB, n=20), 0.05), CALIB)
        assert fight.keypoint_jitter >= 3 * walk.keypoint_jitter

    def test_camera_invariance(self):
        cam2 = similarity_calib(camera_id="c02", scale=0.004, theta=1.1,
                                tx=8.0, ty=-2.0)
        f1 = kinematics(walker_window(CALIB, n=20, gait_hz=0.75), CALIB)
        f2 = kinematics(walker_window(cam2, n=20, gait_hz=0.75), cam2)
        assert np.allclose(f1.as_array(), f2.as_array(), atol=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            feat(speed=-1.0)
        with pytest.raises(ValueError):
            feat(jitter=float("nan"))
        feat(accel=-2.0)  # signed, allowed


class TestBaseline:
    def test_untrusted_until_hundred(self):
        b = CameraBaseline()
        for i in range(TRUST_SAMPLES - 1):
            b.update(feat(), now=i * 1000)
        assert not b.trusted
        b.update(feat(), now=TRUST_SAMPLES * 1000)
        assert b.trusted

    def test_constant_input_mean_exact_variance_zero(self):
        b = CameraBaseline()
        for i in range(150):
            b.update(feat(speed=1.3), now=i * 1000)
        assert b.mean() == pytest.approx(feat(speed=1.3).as_array())
        assert np.all(b.variance() >= 0.0)
        assert b.variance()[0] == pytest.approx(0.0, abs=1e-12)

    def test_half_life_weighting(self):
        # One sample at weight 1 decays to weight 0.5 after one half-life;
        # the new sample then carries 2/3 of the mass.
        b = CameraBaseline(half_life_ms=600_000)
        b.update(feat(speed=1.0), now=0)
        b.update(feat(speed=0.0), now=600_000)
        assert b.mean()[0] == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_clock_must_not_reverse(self):
        b = CameraBaseline()
        b.update(feat(), now=1000)
        with pytest.raises(ValueError):
            b.update(feat(), now=999)

    def test_variance_tracks_dispersion(self):
        b = CameraBaseline()
        for i in range(200):
            b.update(feat(speed=1.0 if i % 2 else 2.0), now=i * 1000)
        assert b.variance()[0] == pytest.approx(0.25, abs=0.01)


class TestAnomalyScore:
    def _trusted(self, value=1.3, n=150):
        b = CameraBaseline()
        for i in range(n):
            b.update(feat(speed=value), now=i * 1000)
        return b

    def test_untrusted_scores_zero(self):
        b = CameraBaseline()
        b.update(feat(), now=0)
        assert anomaly_score(feat(speed=99.0), b) == 0.0

    def test_mean_input_scores_zero(self):
        b = self._trusted()
        assert anomaly_score(feat(speed=1.3), b) == 0.0

    def test_known_value_at_variance_floor(self):
        # Constant history pins variance to the 1e-6 floor; an offset of
        # 0.008 in one feature gives z = 8 and score 1 - e^-1.
        b = self._trusted(value=1.3)
        s = anomaly_score(feat(speed=1.3 + 0.008), b)
        assert s == pytest.approx(1.0 - math.exp(-1.0), abs=1e-6)

    def test_monotone_in_each_feature(self):
        b = self._trusted()
        base = anomaly_score(feat(speed=1.4), b)
        assert anomaly_score(feat(speed=1.5), b) > base
        assert anomaly_score(feat(speed=1.4, jitter=0.02), b) > base

    def test_bounded(self):
        b = self._trusted()
        s = anomaly_score(feat(speed=1e6), b)
        assert 0.0 <= s <= 1.0

    def test_scorer_never_scores_sample_against_itself(self):
        sc = BaselineAnomalyScorer()
        for i in range(TRUST_SAMPLES):
            sc.score("c01", feat(speed=1.3), now=i * 1000)
        # First outlier is judged against the clean history.
        s = sc.score("c01", feat(speed=5.0), now=200_000)
        assert s > 0.5

    def test_constant_scorer_contract(self):
        assert ConstantScorer(0.0).score("c01", feat(), 0) == 0.0
        with pytest.raises(ConfigInvalid):
            ConstantScorer(1.5)


class TestClassifyAction:
    def test_standing(self):
        assert classify_action(walker_window(CALIB, n=10, speed_m=0.05),
                               CALIB) == "standing"

    def test_walking(self):
        assert classify_action(walker_window(CALIB, n=10, speed_m=1.3),
                               CALIB) == "walking"

    def test_running(self):
        assert classify_action(walker_window(CALIB, n=10, speed_m=3.1),
                               CALIB) == "running"

    def test_short_window_unknown(self):
        assert classify_action(walker_window(CALIB, n=4), CALIB) == "unknown"

    def test_fallen_overrides_speed(self):
        from svs.tracker import Observation
        win = list(walker_window(CALIB, n=10, speed_m=3.0))
        for k in range(5, 10):
            o = win[k]
            b = o.bbox
            wide = BBox(b.x, b.y + b.h * 0.6, b.h * 0.9, b.h * 0.4)
            win[k] = Observation(bbox=wide, keypoints=o.keypoints,
                                 timestamp=o.timestamp)
        assert classify_action(win, CALIB) == "fallen"

    def test_brief_aspect_flip_is_not_a_fall(self):
        from svs.tracker import Observation
        win = list(walker_window(CALIB, n=10, speed_m=1.3))
        for k in range(7, 10):
            o = win[k]
            b = o.bbox
            wide = BBox(b.x, b.y + b.h * 0.6, b.h * 0.9, b.h * 0.4)
            win[k] = Observation(bbox=wide, keypoints=o.keypoints,
                                 timestamp=o.timestamp)
        assert classify_action(win, CALIB) == "walking"

    def test_calibration_equivariance(self):
        cam2 = similarity_calib(camera_id="c02", scale=0.02, theta=0.4)
        for speed in (0.1, 1.3, 3.0):
            w1 = walker_window(CALIB, n=10, speed_m=speed)
            w2 = walker_window(cam2, n=10, speed_m=speed)
            assert classify_action(w1, CALIB) == classify_action(w2, cam2)

    def test_threshold_validation(self):
        with pytest.raises(ConfigInvalid):
            ActionThresholds(standing_speed=3.0, running_speed=2.5)
        with pytest.raises(ConfigInvalid):
            ActionThresholds(fallen_frames=0)


def _event(camera_id="c01", t=0, detections=()):
    return DetectionEvent(camera_id=camera_id, site_id="s1", timestamp=t,
                          frame_index=t // 66, detections=tuple(detections))


def _record(gid, t, score, cam="c01"):
    from svs.model import AnalyticsRecord
    return AnalyticsRecord(global_id=gid, camera_id=cam, record_time=t,
                           bbox=BBox(0, 0, 10, 30), anomaly_score=score,
                           action="walking")


class TestRuleEngine:
    def test_watchlist_detection_alerts(self):
        eng = RuleEngine("s1")
        gun = Detection(bbox=BBox(5, 5, 10, 10), confidence=0.81, cls="gun")
        alerts = eng.evaluate_rules(_event(detections=[gun]))
        assert len(alerts) == 1
        a = alerts[0]
        assert a.kind == "object" and a.score == pytest.approx(0.81)
        assert a.global_ids == () and "gun" in a.detail

    def test_non_watchlist_ignored(self):
        eng = RuleEngine("s1")
        bag = Detection(bbox=BBox(5, 5, 10, 10), confidence=0.9, cls="bag")
        assert eng.evaluate_rules(_event(detections=[bag])) == []

    def test_anomaly_threshold_and_dedup(self):
        eng = RuleEngine("s1")
        a1 = eng.evaluate_rules(_event(t=0), records=[_record(7, 0, 0.95)])
        assert len(a1) == 1 and a1[0].global_ids == (7,)
        # Same identity inside 30 s: suppressed, even across cameras.
        assert eng.evaluate_rules(
            _event(t=29_999), records=[_record(7, 29_999, 0.99)]) == []
        a2 = eng.evaluate_rules(
            _event(t=30_000), records=[_record(7, 30_000, 0.99)])
        assert len(a2) == 1

    def test_dedup_is_per_identity(self):
        eng = RuleEngine("s1")
        alerts = eng.evaluate_rules(
            _event(t=0), records=[_record(1, 0, 0.95), _record(2, 0, 0.97)])
        assert len(alerts) == 2

    def test_below_threshold_silent(self):
        eng = RuleEngine("s1")
        assert eng.evaluate_rules(
            _event(t=0), records=[_record(1, 0, 0.89)]) == []

    def test_occupancy_edge_trigger(self):
        rules = EmergencyRuleSet(occupancy_limit={"c01": 10})
        eng = RuleEngine("s1", rules)
        fired = []
        for t, count in [(0, 9), (1, 12), (2, 12), (3, 8), (4, 12)]:
            fired.extend(eng.evaluate_rules(_event(t=t), occupancy=count))
        assert len(fired) == 2
        assert all(a.kind == "occupancy" for a in fired)
        assert fired[0].record_time == 1 and fired[1].record_time == 4
        assert "count=12" in fired[0].detail

    def test_no_limit_no_occupancy_rule(self):
        eng = RuleEngine("s1")
        assert eng.evaluate_rules(_event(t=0), occupancy=1000) == []

    def test_alert_ids_unique_and_deterministic(self):
        def run():
            eng = RuleEngine("s1")
            gun = Detection(bbox=BBox(5, 5, 10, 10), confidence=0.8,
                            cls="gun")
            out = []
            for t in range(3):
                out.extend(eng.evaluate_rules(_event(t=t, detections=[gun])))
            return [a.alert_id for a in out]
        ids = run()
        assert len(set(ids)) == 3
        assert ids == run()

    def test_wire_round_trip_matches_declared_shape(self):
        from svs.schemas import REGISTRY
        eng = RuleEngine("s1", EmergencyRuleSet(occupancy_limit={"c01": 2}))
        alerts = eng.evaluate_rules(
            _event(t=5, detections=[Detection(bbox=BBox(0, 0, 5, 5),
                                              confidence=0.9, cls="gun")]),
            records=[_record(3, 5, 0.95)], occupancy=4)
        declared = {f.name for f in REGISTRY["emergency_alert"].fields}
        for a in alerts:
            wire = a.to_wire()
            assert set(wire) == declared
            back = EmergencyAlert.from_wire(wire, "s1")
            assert back.kind == a.kind and back.global_ids == a.global_ids

    def test_rule_set_validation(self):
        with pytest.raises(ConfigInvalid):
            EmergencyRuleSet(anomaly_threshold=0.0)
        with pytest.raises(ConfigInvalid):
            EmergencyRuleSet(anomaly_threshold=1.1)
        with pytest.raises(ConfigInvalid):
            EmergencyRuleSet(occupancy_limit={"c01": 0})
        with pytest.raises(ConfigInvalid):
            EmergencyRuleSet(object_watchlist={""})

    def test_constant_zero_scorer_silences_anomaly_alerts(self):
        # Interface contract: the rule engine sees whatever the scorer
        # says; a zero scorer can never cross the threshold.
        scorer = ConstantScorer(0.0)
        f = feat(speed=50.0)
        score = scorer.score("c01", f, now=0)
        eng = RuleEngine("s1")
        recs = [_record(1, 0, score)]
        assert eng.evaluate_rules(_event(t=0), records=recs) == []
