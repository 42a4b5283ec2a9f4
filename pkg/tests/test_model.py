"""Interchange parsing, the closed event schema, and calibration geometry."""
import json
import math

import numpy as np
import pytest

from svs.errors import (
    ForbiddenField,
    MalformedLine,
    NonMonotonicFrame,
    OutOfBounds,
    SchemaViolation,
)
from svs.model import (
    BBox,
    CameraCalibration,
    Detection,
    DetectionEvent,
    Keypoints,
    event_to_line,
    parse_event_line,
    read_event_lines,
    validate_event,
)


def _kp(x=100.0, y=50.0, c=0.9):
    return [[x + i, y + i, c] for i in range(17)]


def _line(**over):
    obj = {
        "v": 1,
        "site": "s1",
        "cam": "c01",
        "t": 1700000000123,
        "frame": 42,
        "dets": [
            {"cls": "person", "conf": 0.93, "bbox": [100.0, 50.0, 40.0, 120.0], "kp": _kp()},
        ],
    }
    obj.update(over)
    return json.dumps(obj)


class TestParse:
    def test_good_line(self):
        ev = parse_event_line(_line())
        assert ev.camera_id == "c01"
        assert ev.site_id == "s1"
        assert ev.timestamp == 1700000000123
        assert ev.frame_index == 42
        assert len(ev.detections) == 1
        d = ev.detections[0]
        assert d.cls == "person"
        assert d.confidence == 0.93
        assert d.bbox.as_list() == [100.0, 50.0, 40.0, 120.0]
        assert d.keypoints.num_visible() == 17

    def test_bytes_input(self):
        ev = parse_event_line(_line().encode())
        assert ev.camera_id == "c01"

    def test_round_trip(self):
        ev = parse_event_line(_line())
        again = parse_event_line(event_to_line(ev))
        assert again == ev

    def test_not_json(self):
        with pytest.raises(MalformedLine):
            parse_event_line("{nope")

    def test_json_but_not_object(self):
        with pytest.raises(MalformedLine):
            parse_event_line("[1, 2]")

    def test_bad_utf8(self):
        with pytest.raises(MalformedLine):
            parse_event_line(b"\xff\xfe{}")

    def test_wrong_version(self):
        with pytest.raises(SchemaViolation):
            parse_event_line(_line(v=2))

    def test_unknown_top_level_key(self):
        with pytest.raises(SchemaViolation):
            parse_event_line(_line(extra_field=1))

    def test_missing_key(self):
        obj = json.loads(_line())
        del obj["frame"]
        with pytest.raises(SchemaViolation):
            parse_event_line(json.dumps(obj))

    def test_non_person_has_no_keypoints(self):
        line = _line(dets=[{"cls": "gun", "conf": 0.8, "bbox": [1, 1, 10, 5]}])
        ev = parse_event_line(line)
        assert ev.detections[0].keypoints is None

    def test_kp_on_non_person_rejected(self):
        line = _line(dets=[{"cls": "gun", "conf": 0.8, "bbox": [1, 1, 10, 5], "kp": _kp()}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_person_without_kp_rejected(self):
        line = _line(dets=[{"cls": "person", "conf": 0.8, "bbox": [1, 1, 10, 5]}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_wrong_kp_count(self):
        line = _line(dets=[{"cls": "person", "conf": 0.8, "bbox": [1, 1, 10, 5],
                            "kp": _kp()[:16]}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_kp_confidence_out_of_range(self):
        kp = _kp()
        kp[3][2] = 1.5
        line = _line(dets=[{"cls": "person", "conf": 0.8, "bbox": [1, 1, 10, 5], "kp": kp}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_conf_out_of_range(self):
        line = _line(dets=[{"cls": "person", "conf": 1.2, "bbox": [1, 1, 10, 5], "kp": _kp()}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_bool_is_not_a_number(self):
        line = _line(dets=[{"cls": "person", "conf": True, "bbox": [1, 1, 10, 5], "kp": _kp()}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_nonpositive_bbox(self):
        line = _line(dets=[{"cls": "person", "conf": 0.5, "bbox": [1, 1, 0, 5], "kp": _kp()}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)

    def test_nan_rejected(self):
        raw = _line().replace("0.93", "NaN")
        with pytest.raises(SchemaViolation):
            parse_event_line(raw)

    def test_negative_frame(self):
        with pytest.raises(SchemaViolation):
            parse_event_line(_line(frame=-1))

    def test_unknown_det_key(self):
        line = _line(dets=[{"cls": "person", "conf": 0.5, "bbox": [1, 1, 4, 5],
                            "kp": _kp(), "note": "x"}])
        with pytest.raises(SchemaViolation):
            parse_event_line(line)


class TestForbiddenFields:
    @pytest.mark.parametrize("key", [
        "image", "pixels", "face", "jpeg", "png", "embedding_raw",
        "face_crop", "IMAGE_DATA", "thumb_jpeg",
    ])
    def test_top_level(self, key):
        with pytest.raises(ForbiddenField):
            parse_event_line(_line(**{key: "x"}))

    def test_nested_in_detection(self):
        line = _line(dets=[{"cls": "person", "conf": 0.5, "bbox": [1, 1, 4, 5],
                            "kp": _kp(), "face_patch": "AAAA"}])
        with pytest.raises(ForbiddenField):
            parse_event_line(line)

    def test_deeply_nested(self):
        # Forbidden check runs before the closed-schema check, so a smuggled
        # key inside an otherwise-unknown structure is still named as such.
        obj = json.loads(_line())
        obj["meta"] = {"inner": [{"png_bytes": "AAAA"}]}
        with pytest.raises(ForbiddenField):
            parse_event_line(json.dumps(obj))

    def test_precedence_over_schema(self):
        # Same line has both an unknown key and a forbidden key: the
        # forbidden one wins so audits see the privacy breach, not the typo.
        obj = json.loads(_line())
        obj["zzz_unknown"] = 1
        obj["aaa_image"] = "x"
        with pytest.raises(ForbiddenField):
            parse_event_line(json.dumps(obj))


class TestTypes:
    def test_bbox_derived(self):
        b = BBox(10, 20, 30, 60)
        assert b.cx == 25 and b.cy == 50
        assert b.bottom_center == (25, 80)
        assert b.aspect == 0.5

    def test_bbox_nonfinite(self):
        with pytest.raises(SchemaViolation):
            BBox(float("inf"), 0, 1, 1)

    def test_keypoints_shape(self):
        with pytest.raises(SchemaViolation):
            Keypoints([[0, 0, 0]] * 16)

    def test_keypoints_readonly(self):
        kp = Keypoints(_kp())
        with pytest.raises(ValueError):
            kp.pts[0, 0] = 5.0

    def test_keypoints_visible(self):
        pts = _kp()
        pts[2][2] = 0.0
        kp = Keypoints(pts)
        assert kp.num_visible() == 16
        assert not kp.visible[2]

    def test_detection_person_requires_kp(self):
        with pytest.raises(SchemaViolation):
            Detection(bbox=BBox(0, 0, 1, 1), confidence=0.5, cls="person")


def _calib(h=None, cam="c01"):
    if h is None:
        # Pure scaling: 0.02 m per pixel.
        h = (0.02, 0, 0, 0, 0.02, 0, 0, 0, 1)
    return CameraCalibration(camera_id=cam, site_id="s1",
                             image_width=1920, image_height=1080, homography=h)


class TestCalibration:
    def test_singular_rejected(self):
        with pytest.raises(SchemaViolation):
            _calib(h=(1, 0, 0, 2, 0, 0, 0, 0, 1))

    def test_meters_per_pixel_similarity(self):
        # For a similarity map with scale s, the local scale is s everywhere.
        c = _calib()
        for u, v in [(0, 0), (960, 540), (1919, 1079)]:
            assert _calib().meters_per_pixel(u, v) == pytest.approx(0.02, rel=1e-12)

    def test_meters_per_pixel_rotation_invariant(self):
        th = 0.7
        s = 0.05
        h = (s * math.cos(th), -s * math.sin(th), 3.0,
             s * math.sin(th), s * math.cos(th), -2.0,
             0, 0, 1)
        assert _calib(h=h).meters_per_pixel(500, 500) == pytest.approx(s, rel=1e-12)

    def test_perspective_scale_varies(self):
        # A perspective map compresses scale with depth; just check the
        # Jacobian-based scale is positive and differs across the image.
        h = (0.02, 0, 0, 0, 0.02, 0, 0, 1e-4, 1)
        c = _calib(h=h)
        near = c.meters_per_pixel(960, 1000)
        far = c.meters_per_pixel(960, 100)
        assert near > 0 and far > 0 and near != far


class TestValidate:
    def _event(self, bbox):
        kp = Keypoints(_kp())
        det = Detection(bbox=bbox, confidence=0.9, cls="person", keypoints=kp)
        return DetectionEvent(camera_id="c01", site_id="s1", timestamp=1000,
                              frame_index=5, detections=(det,))

    def test_in_bounds_untouched(self):
        ev = self._event(BBox(10, 10, 50, 100))
        res = validate_event(ev, _calib(), prev_frame=4)
        assert res.event is ev
        assert res.clamped == 0 and res.dropped == 0

    def test_clamp(self):
        ev = self._event(BBox(-20, 10, 50, 100))
        res = validate_event(ev, _calib(), policy="clamp")
        assert res.clamped == 1
        b = res.event.detections[0].bbox
        assert b.x == 0 and b.w == 30

    def test_drop_fully_outside(self):
        ev = self._event(BBox(-500, -500, 50, 100))
        res = validate_event(ev, _calib(), policy="clamp")
        assert res.dropped == 1
        assert len(res.event.detections) == 0

    def test_strict_raises(self):
        ev = self._event(BBox(-20, 10, 50, 100))
        with pytest.raises(OutOfBounds):
            validate_event(ev, _calib(), policy="strict")

    def test_non_monotonic_frame(self):
        ev = self._event(BBox(10, 10, 50, 100))
        with pytest.raises(NonMonotonicFrame):
            validate_event(ev, _calib(), prev_frame=5)
        with pytest.raises(NonMonotonicFrame):
            validate_event(ev, _calib(), prev_frame=9)

    def test_non_monotonic_timestamp(self):
        ev = self._event(BBox(10, 10, 50, 100))
        with pytest.raises(NonMonotonicFrame):
            validate_event(ev, _calib(), prev_timestamp=2000)

    def test_wrong_camera_calibration(self):
        ev = self._event(BBox(10, 10, 50, 100))
        with pytest.raises(SchemaViolation):
            validate_event(ev, _calib(cam="c02"))


class TestFuzz:
    """Random structural mutations must parse cleanly or raise a typed error."""

    def test_mutations_never_escape_typed_errors(self):
        rng = np.random.default_rng(20261)
        base = _line()
        junk = ["image", 3.5, None, True, [], {}, "x" * 100, float("nan")]
        for _ in range(500):
            obj = json.loads(base)
            for _ in range(rng.integers(1, 4)):
                action = rng.integers(0, 4)
                dets = obj.get("dets")
                if action == 0:
                    obj[str(rng.integers(0, 10))] = junk[rng.integers(0, len(junk))]
                elif action == 1 and isinstance(dets, list) and dets and isinstance(dets[0], dict):
                    d = dets[0]
                    k = list(d)[rng.integers(0, len(d))]
                    d[k] = junk[rng.integers(0, len(junk))]
                elif action == 2:
                    k = list(obj)[rng.integers(0, len(obj))]
                    obj[k] = junk[rng.integers(0, len(junk))]
                else:
                    k = list(obj)[rng.integers(0, len(obj))]
                    del obj[k]
            try:
                text = json.dumps(obj)
            except ValueError:
                continue
            try:
                ev = parse_event_line(text)
                assert isinstance(ev, DetectionEvent)
            except (MalformedLine, SchemaViolation, ForbiddenField):
                pass

    def test_read_event_lines_never_raises(self):
        lines = [_line(), "", "{bad", _line(v=9), json.dumps({"image": 1}), _line()]
        results = list(read_event_lines(lines))
        # Blank line skipped, two good events, three typed errors.
        assert len(results) == 5
        kinds = [type(r[1]).__name__ for r in results]
        assert kinds.count("DetectionEvent") == 2
        assert "MalformedLine" in kinds and "SchemaViolation" in kinds
        assert "ForbiddenField" in kinds
