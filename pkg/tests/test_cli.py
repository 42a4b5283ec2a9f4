"""Process entry points: subcommands, exit codes, capture files, node
lifecycles driven from config."""

import json
import socket
import threading
import time
import urllib.request

import pytest

from svs.audit import audit_payloads
from svs.cli import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_VIOLATION,
    FileCaptureGateway,
    main,
    run_edge,
    start_cloud,
    write_run,
)
from svs.config import load_scenario, parse_config
from svs.errors import PortUnavailable
from svs.model import CameraCalibration, event_to_line, parse_event_line
from svs.simulator import GroundTruth, ScenarioConfig, generate
from svs.store import RecordStore

H = [0.05, 0.0, -10.0, 0.0, 0.05, -5.0, 0.0, 0.0, 1.0]
TOKEN = "0123456789abcdef0123456789abcdef"
ADMIN = "fedcba9876543210fedcba9876543210"


def calib(cam="c01"):
    return CameraCalibration(cam, "s1", 1280, 720, tuple(H))


def write_scenario(path, duration_s=20.0, agents=2):
    path.write_text(
        f'[scenario]\nseed = 7\nduration_s = {duration_s}\nfps = 10.0\n'
        f'agent_count = {agents}\n'
        '[[camera]]\nid = "c01"\nwidth = 1280\nheight = 720\n'
        f'homography = {H}\n')
    return path


def write_edge_config(path, tmp_path, store=True, uplink_port=None):
    lines = ['[node]', 'role = "edge"', '[edge]', 'site = "s1"']
    if uplink_port is None:
        lines.append(f'capture_path = "{tmp_path / "cap.ndjson"}"')
    if store:
        lines.append(f'store_dir = "{tmp_path / "records"}"')
    lines += ['[[edge.camera]]', 'id = "c01"', 'width = 1280',
              'height = 720', f'homography = {H}']
    if uplink_port is not None:
        lines += ['[edge.uplink]', 'host = "127.0.0.1"',
                  f'port = {uplink_port}', f'token = "{TOKEN}"']
    path.write_text("\n".join(lines) + "\n")
    return path


def write_cloud_config(path, tmp_path, listen_port=0):
    path.write_text(
        '[node]\nrole = "cloud"\n[cloud]\n'
        f'listen_port = {listen_port}\napi_port = 0\n'
        f'gateway_token = "{TOKEN}"\nadmin_token = "{ADMIN}"\n'
        f'state_dir = "{tmp_path / "state"}"\n'
        'tables = ["records", "occupancy", "heat", "alerts"]\n'
        '[cloud.routing]\n'
        '"svs/s1/*/analytics" = "records"\n'
        '"svs/s1/*/occupancy" = "occupancy"\n'
        '"svs/s1/_site/heatmap" = "heat"\n'
        '"svs/s1/*/alert" = "alerts"\n')
    return path


class TestParser:
    def test_speed_without_replay(self, tmp_path):
        cfg = write_edge_config(tmp_path / "e.toml", tmp_path)
        assert main(["edge", "--config", str(cfg),
                     "--speed", "2"]) == EXIT_ERROR

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            main(["fly"])

    def test_audit_needs_input(self):
        assert main(["audit"]) == EXIT_ERROR

    def test_missing_config_file(self):
        assert main(["edge", "--config", "/nope/x.toml"]) == EXIT_ERROR

    def test_role_mismatch(self, tmp_path):
        cfg = write_cloud_config(tmp_path / "c.toml", tmp_path)
        assert main(["edge", "--config", str(cfg)]) == EXIT_ERROR


class TestSim:
    def test_writes_events_and_truth(self, tmp_path):
        sc = write_scenario(tmp_path / "s.toml")
        out = tmp_path / "run"
        assert main(["sim", "--scenario", str(sc),
                     "--out", str(out)]) == EXIT_OK
        lines = (out / "events.ndjson").read_text().strip().split("\n")
        assert len(lines) == 200    # 20 s at 10 fps
        ev = parse_event_line(lines[0])
        assert ev.camera_id == "c01"
        truth = GroundTruth.from_json_obj(
            json.loads((out / "truth.json").read_text()))
        assert truth.run_id

    def test_deterministic(self, tmp_path):
        sc = write_scenario(tmp_path / "s.toml")
        main(["sim", "--scenario", str(sc), "--out", str(tmp_path / "a")])
        main(["sim", "--scenario", str(sc), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a/events.ndjson").read_bytes() \
            == (tmp_path / "b/events.ndjson").read_bytes()

    def test_bad_scenario(self, tmp_path):
        (tmp_path / "s.toml").write_text("[scenario]\nseed = 1\n")
        assert main(["sim", "--scenario", str(tmp_path / "s.toml"),
                     "--out", str(tmp_path / "o")]) == EXIT_ERROR


class TestEdgeReplay:
    def test_replay_to_capture_and_store(self, tmp_path):
        sc = write_scenario(tmp_path / "s.toml")
        out = tmp_path / "run"
        main(["sim", "--scenario", str(sc), "--out", str(out)])
        cfg = write_edge_config(tmp_path / "e.toml", tmp_path)
        assert main(["edge", "--config", str(cfg),
                     "--replay", str(out / "events.ndjson")]) == EXIT_OK

        frames = [json.loads(ln) for ln in
                  (tmp_path / "cap.ndjson").read_text().strip().split("\n")]
        assert frames and all(f["topic"].startswith("svs/s1/")
                              for f in frames)
        assert audit_payloads(frames) == ()

        store = RecordStore(tmp_path / "records", sync=False)
        assert store.count() > 0
        store.close()

    def test_missing_replay_file(self, tmp_path):
        cfg = write_edge_config(tmp_path / "e.toml", tmp_path)
        assert main(["edge", "--config", str(cfg),
                     "--replay", str(tmp_path / "no.ndjson")]) == EXIT_ERROR

    def test_replay_without_ingest_or_replay(self, tmp_path):
        cfg = write_edge_config(tmp_path / "e.toml", tmp_path)
        assert main(["edge", "--config", str(cfg)]) == EXIT_ERROR


class TestLiveEdge:
    def test_socket_ingest_to_capture(self, tmp_path):
        free = socket.socket()
        free.bind(("127.0.0.1", 0))
        port = free.getsockname()[1]
        free.close()

        doc = {
            "node": {"role": "edge"},
            "edge": {
                "site": "s1",
                "capture_path": str(tmp_path / "cap.ndjson"),
                "camera": [{"id": "c01", "width": 1280, "height": 720,
                            "homography": H}],
                "ingest": {"host": "127.0.0.1", "port": port},
            },
        }
        cfg = parse_config(doc, env={})
        stop = threading.Event()
        box = {}

        def drive():
            box["stats"] = run_edge(cfg, stop=stop)

        t = threading.Thread(target=drive)
        t.start()
        try:
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline:
                try:
                    prod = socket.create_connection(("127.0.0.1", port),
                                                    timeout=0.2)
                    break
                except OSError:
                    time.sleep(0.05)
            else:
                pytest.fail("ingest listener never came up")
            stream, _ = generate(ScenarioConfig(
                seed=3, duration_s=10.0, fps=10.0, cameras=(calib(),),
                agent_count=2))
            for ev in stream:
                prod.sendall((event_to_line(ev) + "\n").encode())
            prod.close()
            time.sleep(0.5)
        finally:
            stop.set()
            t.join(timeout=10)
        assert not t.is_alive()
        assert box["stats"].accepted == 100
        frames = (tmp_path / "cap.ndjson").read_text().strip().split("\n")
        assert len(frames) > 0

    def test_occupied_ingest_port(self, tmp_path):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        blocker.listen(1)
        port = blocker.getsockname()[1]
        doc = {
            "node": {"role": "edge"},
            "edge": {
                "site": "s1",
                "capture_path": str(tmp_path / "cap.ndjson"),
                "camera": [{"id": "c01", "width": 1280, "height": 720,
                            "homography": H}],
                "ingest": {"host": "127.0.0.1", "port": port},
            },
        }
        cfg = parse_config(doc, env={})
        with pytest.raises(PortUnavailable):
            run_edge(cfg)
        blocker.close()


class TestCloudCmd:
    def test_start_query_stop(self, tmp_path):
        cfgpath = write_cloud_config(tmp_path / "c.toml", tmp_path)
        from svs.config import load_config
        handle = start_cloud(load_config(cfgpath, env={}))
        try:
            req = urllib.request.Request(
                f"http://127.0.0.1:{handle.api.port}"
                "/v1/records?cam=c01&from=0&to=10",
                headers={"Authorization": f"Bearer {ADMIN}"})
            body = json.load(urllib.request.urlopen(req))
            assert body == {"cam": "c01", "records": []}
        finally:
            handle.stop()

    def test_occupied_port(self, tmp_path):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        blocker.listen(1)
        port = blocker.getsockname()[1]
        cfgpath = write_cloud_config(tmp_path / "c.toml", tmp_path,
                                     listen_port=port)
        assert main(["cloud", "--config", str(cfgpath)]) == EXIT_ERROR
        blocker.close()

    def test_run_cloud_stops_on_event(self, tmp_path):
        from svs.cli import run_cloud
        from svs.config import load_config
        cfg = load_config(write_cloud_config(tmp_path / "c.toml", tmp_path),
                          env={})
        stop = threading.Event()
        box = {}

        def drive():
            box["rc"] = run_cloud(cfg, stop=stop)

        t = threading.Thread(target=drive)
        t.start()
        time.sleep(0.3)
        stop.set()
        t.join(timeout=10)
        assert not t.is_alive() and box["rc"] == EXIT_OK


class TestAudit:
    @pytest.fixture()
    def capture(self, tmp_path):
        sc = write_scenario(tmp_path / "s.toml", duration_s=10.0)
        out = tmp_path / "run"
        main(["sim", "--scenario", str(sc), "--out", str(out)])
        cfg = write_edge_config(tmp_path / "e.toml", tmp_path)
        main(["edge", "--config", str(cfg),
              "--replay", str(out / "events.ndjson")])
        return tmp_path / "cap.ndjson"

    def test_clean_capture_passes(self, tmp_path, capture, capsys):
        rc = main(["audit", "--capture", str(capture),
                   "--store", str(tmp_path / "records"),
                   "--config", str(tmp_path / "e.toml")])
        assert rc == EXIT_OK
        assert "overall: PASS" in capsys.readouterr().out

    def test_tampered_capture_fails(self, tmp_path, capture, capsys):
        lines = capture.read_text().strip().split("\n")
        idx = next(i for i, ln in enumerate(lines)
                   if json.loads(ln)["topic"].endswith("/analytics"))
        frame = json.loads(lines[idx])
        frame["payload"][0]["face_crop"] = "x" * 10
        lines[idx] = json.dumps(frame)
        bad = tmp_path / "tampered.ndjson"
        bad.write_text("\n".join(lines) + "\n")
        rc = main(["audit", "--capture", str(bad)])
        assert rc == EXIT_VIOLATION
        assert "overall: FAIL" in capsys.readouterr().out

    def test_unparseable_line_is_violation_not_crash(self, tmp_path,
                                                     capture):
        bad = tmp_path / "mangled.ndjson"
        bad.write_text(capture.read_text() + "{not json\n")
        assert main(["audit", "--capture", str(bad)]) == EXIT_VIOLATION

    def test_json_output(self, tmp_path, capture, capsys):
        rc = main(["audit", "--capture", str(capture), "--json"])
        assert rc == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] is True
        assert set(report["lenses"]) == {"algorithm", "system", "model",
                                         "data"}

    def test_missing_capture_is_error(self):
        assert main(["audit", "--capture", "/nope.ndjson"]) == EXIT_ERROR


class TestFileCaptureGateway:
    def test_frames_append_with_seq(self, tmp_path):
        path = tmp_path / "cap.ndjson"
        gw = FileCaptureGateway("s1", str(path))
        from svs.model import AnalyticsRecord, BBox
        rec = AnalyticsRecord(global_id=1, camera_id="c01",
                              record_time=1000,
                              bbox=BBox(1.0, 2.0, 3.0, 4.0),
                              anomaly_score=0.5, action="walking")
        gw.publish([rec])
        gw.publish([rec])
        gw.flush()
        gw.close()
        frames = [json.loads(ln)
                  for ln in path.read_text().strip().split("\n")]
        assert [f["seq"] for f in frames] == [1, 2]
        assert gw.messages == []


def test_write_run_matches_generate(tmp_path):
    sc = write_scenario(tmp_path / "s.toml", duration_s=5.0)
    config = load_scenario(tmp_path / "s.toml")
    events_path, truth_path = write_run(config, tmp_path / "out")
    stream, truth = generate(config)
    lines = open(events_path).read().strip().split("\n")
    assert lines == [event_to_line(ev) for ev in stream]
    obj = json.loads(open(truth_path).read())
    assert obj == json.loads(json.dumps(truth.to_json_obj()))
