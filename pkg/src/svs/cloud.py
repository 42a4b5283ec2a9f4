"""Cloud node: routed ingestion keyed by (camera, timestamp), the query
API the dashboard consumes, bearer-token auth, and the alert push channel.

Ingestion is idempotent on (topic, seq) so the gateway's at-least-once
retransmits collapse to exactly-once effects. All state lives in one
process; an optional directory adds a durable mirror for analytics
records, alerts, and the dedup high-water marks.
"""
import hashlib
import hmac
import json
import os
import secrets
import socket
import threading
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .analytics import HeatGrid, merge_heatmaps, occupancy_from_wire
from .errors import (
    AuthRejected,
    ConfigInvalid,
    ForbiddenField,
    MalformedRange,
    NoMatchingRule,
    SchemaViolation,
    UnknownTable,
)
from .gateway import TopicMessage, recv_frame, send_frame
from .model import AnalyticsRecord
from .scoring import EmergencyAlert

SCOPES = frozenset({"read", "subscribe_alerts", "admin"})
MIN_TOKEN_CHARS = 32
SSE_KEEPALIVE_S = 2.0


def _digest(token):
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class UserToken:
    token: str
    user_id: str
    scopes: frozenset

    def __post_init__(self):
        if len(self.token) < MIN_TOKEN_CHARS:
            raise ConfigInvalid("tokens must be at least 32 characters")
        if not self.user_id:
            raise ConfigInvalid("user_id must be nonempty")
        bad = set(self.scopes) - SCOPES
        if bad:
            raise ConfigInvalid(f"unknown scopes {sorted(bad)}")
        object.__setattr__(self, "scopes", frozenset(self.scopes))


class TokenRegistry:
    """Issued bearer tokens, verified in constant time against digests."""

    def __init__(self):
        self._entries = []   # [digest, user_id, scopes, revoked]
        self._lock = threading.Lock()

    def issue(self, user_id, scopes):
        tok = UserToken(token=secrets.token_hex(24), user_id=user_id,
                        scopes=frozenset(scopes))
        with self._lock:
            self._entries.append([_digest(tok.token), tok.user_id,
                                  tok.scopes, False])
        return tok

    def adopt(self, token, user_id, scopes):
        """Register an externally supplied credential (bootstrap)."""
        tok = UserToken(token=token, user_id=user_id,
                        scopes=frozenset(scopes))
        with self._lock:
            self._entries.append([_digest(token), user_id, tok.scopes,
                                  False])
        return tok

    def verify(self, token, scope):
        """user_id for a live token holding the scope, else AuthRejected."""
        if not token or len(token) < MIN_TOKEN_CHARS:
            raise AuthRejected("malformed token")
        presented = _digest(token)
        with self._lock:
            entries = [list(e) for e in self._entries]
        found = None
        for digest, user_id, scopes, revoked in entries:
            # compare_digest runs on every entry: no early-exit timing.
            if hmac.compare_digest(digest, presented) and found is None:
                found = (user_id, scopes, revoked)
        if found is None:
            raise AuthRejected("unknown token")
        user_id, scopes, revoked = found
        if revoked:
            raise AuthRejected("token revoked")
        if scope not in scopes:
            raise AuthRejected(f"scope {scope!r} not granted")
        return user_id

    def revoke(self, token):
        presented = _digest(token)
        hit = False
        with self._lock:
            for e in self._entries:
                if hmac.compare_digest(e[0], presented):
                    e[3] = True
                    hit = True
        return hit


class CloudNode:
    """Tables plus the alert fan-out. Thread-safe; one instance per node."""

    def __init__(self, routing, tables, *, state_dir=None):
        self.routing = routing
        self.tables = frozenset(tables)
        self._lock = threading.RLock()
        self._alert_cond = threading.Condition(self._lock)
        self._seen = {}        # topic -> last applied seq
        self._rec_times = {}   # cam -> [t]
        self._rec_rows = {}    # cam -> [wire]
        self._occupancy = {}   # cam -> latest wire
        self._heat = {}        # site -> [HeatGrid]
        self._alert_ids = []   # sorted alert_id list
        self._alerts = {}      # alert_id -> (site, wire)
        self._state_dir = state_dir
        self._store = None
        if state_dir is not None:
            from .store import RecordStore
            os.makedirs(state_dir, exist_ok=True)
            self._store = RecordStore(os.path.join(state_dir, "records"),
                                      sync=False)
            self._load_state()

    # -- durable mirror ------------------------------------------------

    def _state_path(self):
        return os.path.join(self._state_dir, "state.json")

    def _alert_log_path(self):
        return os.path.join(self._state_dir, "alerts.jsonl")

    def _load_state(self):
        try:
            with open(self._state_path(), "r", encoding="utf-8") as f:
                self._seen = {k: int(v) for k, v in json.load(f).items()}
        except FileNotFoundError:
            pass
        if os.path.exists(self._alert_log_path()):
            with open(self._alert_log_path(), "r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        obj = json.loads(line)
                        self._apply_alert(obj["site"], obj["alert"],
                                          log=False)
        for cam in self._store.cameras():
            batch = self._store.query(cam, 0, 1 << 62)
            for r in batch.records:
                self._remember_record(r.to_wire())

    def _save_seen(self):
        if self._state_dir is None:
            return
        with open(self._state_path(), "w", encoding="utf-8") as f:
            json.dump(self._seen, f)

    # -- ingestion -------------------------------------------------------

    def last_seqs(self):
        with self._lock:
            return dict(self._seen)

    def put_message(self, msg):
        """Route and apply one message; duplicate (topic, seq) is a no-op
        ack. Returns the acked seq."""
        if not isinstance(msg, TopicMessage):
            msg = TopicMessage.from_wire(msg)
        dest = self.routing.match(msg.topic)
        if dest not in self.tables:
            raise UnknownTable(
                f"rule for {msg.topic!r} names missing table {dest!r}")
        with self._lock:
            if msg.seq <= self._seen.get(msg.topic, 0):
                return msg.seq
            self._apply(msg)
            self._seen[msg.topic] = msg.seq
            self._save_seen()
        return msg.seq

    def _apply(self, msg):
        site = msg.topic.split("/")[1]
        kind = msg.kind
        try:
            if kind == "analytics":
                if not isinstance(msg.payload, list):
                    raise SchemaViolation("analytics payload must be a batch")
                rows = [AnalyticsRecord.from_wire(w) for w in msg.payload]
            elif kind == "occupancy":
                occupancy_from_wire(msg.payload)
            elif kind == "heatmap":
                grid = HeatGrid.from_wire(msg.payload)
            elif kind == "alert":
                EmergencyAlert.from_wire(msg.payload, site)
        except (ValueError, TypeError, KeyError) as exc:
            raise SchemaViolation(f"bad {kind} payload: {exc}") from exc
        if kind == "analytics":
            for r in rows:
                self._remember_record(r.to_wire())
                if self._store is not None:
                    self._store.insert(r)
        elif kind == "occupancy":
            cur = self._occupancy.get(msg.payload["cam"])
            if cur is None or msg.payload["t"] >= cur["t"]:
                self._occupancy[msg.payload["cam"]] = dict(msg.payload)
        elif kind == "heatmap":
            self._heat.setdefault(site, []).append(grid)
        elif kind == "alert":
            self._apply_alert(site, dict(msg.payload), log=True)
            self._alert_cond.notify_all()

    def _remember_record(self, wire):
        cam = wire["cam"]
        times = self._rec_times.setdefault(cam, [])
        rows = self._rec_rows.setdefault(cam, [])
        t = wire["t"]
        if not times or t >= times[-1]:
            times.append(t)
            rows.append(wire)
        else:
            i = bisect_right(times, t)
            times.insert(i, t)
            rows.insert(i, wire)

    def _apply_alert(self, site, wire, log):
        aid = wire["alert_id"]
        if aid in self._alerts:
            return
        insort(self._alert_ids, aid)
        self._alerts[aid] = (site, wire)
        if log and self._state_dir is not None:
            with open(self._alert_log_path(), "a", encoding="utf-8") as f:
                f.write(json.dumps({"site": site, "alert": wire}) + "\n")

    # -- queries ---------------------------------------------------------

    def query_records(self, camera_id, t_from, t_to):
        try:
            t_from = int(t_from)
            t_to = int(t_to)
        except (TypeError, ValueError) as exc:
            raise MalformedRange(f"bad range bounds: {exc}") from exc
        if t_from > t_to:
            raise MalformedRange(f"from {t_from} > to {t_to}")
        with self._lock:
            times = self._rec_times.get(camera_id, [])
            lo = bisect_left(times, t_from)
            hi = bisect_left(times, t_to)
            return [dict(w) for w in
                    self._rec_rows.get(camera_id, [])[lo:hi]]

    def latest_occupancy(self, camera_id):
        with self._lock:
            w = self._occupancy.get(camera_id)
            return dict(w) if w else None

    def heatmap(self, site, hours):
        if hours <= 0:
            raise MalformedRange("hours must be positive")
        with self._lock:
            panes = self._heat.get(site, [])
            if not panes:
                return None
            now = max(p.window_to for p in panes)
            cutoff = now - int(hours * 3_600_000)
            live = [p for p in panes if p.window_to > cutoff]
            if not live:
                return None
            return merge_heatmaps(live)

    def max_alert_id(self):
        with self._lock:
            return self._alert_ids[-1] if self._alert_ids else ""

    def alerts_after(self, last_id, site=None):
        with self._lock:
            i = bisect_left(self._alert_ids, last_id)
            if i < len(self._alert_ids) and self._alert_ids[i] == last_id:
                i += 1
            out = []
            for aid in self._alert_ids[i:]:
                s, wire = self._alerts[aid]
                if site is None or s == site:
                    out.append(dict(wire))
            return out

    def wait_alerts(self, last_id, site=None, timeout=0.25):
        with self._alert_cond:
            got = self.alerts_after(last_id, site)
            if got:
                return got
            self._alert_cond.wait(timeout)
            return self.alerts_after(last_id, site)

    def close(self):
        if self._store is not None:
            self._store.close()


class CloudIngestServer:
    """Persistent-connection ingest endpoint speaking the gateway frame
    protocol: hello/helo with resume, pub/ack with (topic, seq) dedup,
    nack for rejected payloads, heartbeat echo."""

    def __init__(self, node, token, host="127.0.0.1", port=0):
        if len(token) < MIN_TOKEN_CHARS:
            raise ConfigInvalid("gateway token must be at least 32 chars")
        self.node = node
        self.token = token
        self.host = host
        self.port = port
        self._listener = None
        self._stop = threading.Event()
        self._conns = []

    def start(self):
        self._stop.clear()
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, self.port))
        s.listen(16)
        self.port = s.getsockname()[1]
        self._listener = s
        threading.Thread(target=self._accept, daemon=True,
                         name="cloud-ingest-accept").start()
        return self

    def stop(self):
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        for c in list(self._conns):
            try:
                c.close()
            except OSError:
                pass
        self._conns = []

    def _accept(self):
        listener = self._listener
        while not self._stop.is_set():
            try:
                conn, _ = listener.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True,
                             name="cloud-ingest-conn").start()

    def _serve(self, conn):
        conn.settimeout(30.0)
        try:
            hello = recv_frame(conn)
            if hello is None or hello.get("op") != "hello":
                return
            token = hello.get("token", "")
            if not (isinstance(token, str)
                    and hmac.compare_digest(_digest(token),
                                            _digest(self.token))):
                send_frame(conn, {"op": "err", "error": "auth"})
                return
            send_frame(conn, {"op": "helo", "have": self.node.last_seqs()})
            while not self._stop.is_set():
                frame = recv_frame(conn)
                if frame is None:
                    return
                op = frame.get("op")
                if op == "hb":
                    send_frame(conn, {"op": "hb"})
                elif op == "pub":
                    wire = frame.get("msg", {})
                    try:
                        seq = self.node.put_message(wire)
                    except (SchemaViolation, ForbiddenField, UnknownTable,
                            NoMatchingRule) as exc:
                        send_frame(conn, {"op": "nack",
                                          "topic": wire.get("topic"),
                                          "seq": wire.get("seq"),
                                          "error": str(exc)})
                        continue
                    send_frame(conn, {"op": "ack",
                                      "topic": wire.get("topic"),
                                      "seq": seq})
                else:
                    send_frame(conn, {"op": "err",
                                      "error": f"bad op {op!r}"})
        except (OSError, TimeoutError, ValueError):
            return
        finally:
            try:
                conn.close()
            except OSError:
                pass


def _json_bytes(obj):
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


class CloudAPIServer:
    """HTTP query/push surface. Paths are exact; every route wants a
    Bearer token."""

    def __init__(self, node, registry, gateway_token, host="127.0.0.1",
                 port=0):
        self.node = node
        self.registry = registry
        self.gateway_token = gateway_token
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *a):
                pass

            def _bearer(self):
                h = self.headers.get("Authorization", "")
                if not h.startswith("Bearer "):
                    raise AuthRejected("missing bearer token")
                return h[len("Bearer "):].strip()

            def _reply(self, code, obj):
                body = _json_bytes(obj)
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _deny(self, exc):
                self._reply(401, {"error": "auth", "detail": str(exc)})

            def do_GET(self):
                url = urlparse(self.path)
                q = {k: v[0] for k, v in parse_qs(url.query).items()}
                try:
                    if url.path == "/v1/records":
                        outer.registry.verify(self._bearer(), "read")
                        return self._records(q)
                    if url.path == "/v1/occupancy":
                        outer.registry.verify(self._bearer(), "read")
                        return self._occupancy(q)
                    if url.path == "/v1/heatmap":
                        outer.registry.verify(self._bearer(), "read")
                        return self._heatmap(q)
                    if url.path == "/v1/alerts/stream":
                        outer.registry.verify(self._bearer(),
                                              "subscribe_alerts")
                        return self._stream(q)
                    self._reply(404, {"error": "no such path"})
                except AuthRejected as exc:
                    self._deny(exc)
                except MalformedRange as exc:
                    self._reply(400, {"error": "range", "detail": str(exc)})

            def do_POST(self):
                url = urlparse(self.path)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length) if length else b""
                try:
                    body = json.loads(raw.decode("utf-8")) if raw else {}
                except ValueError:
                    return self._reply(400, {"error": "bad json"})
                try:
                    if url.path == "/v1/ingest":
                        return self._ingest(body)
                    if url.path == "/v1/admin/tokens":
                        user = outer.registry.verify(self._bearer(),
                                                     "admin")
                        return self._tokens(body, user)
                    self._reply(404, {"error": "no such path"})
                except AuthRejected as exc:
                    self._deny(exc)

            def _ingest(self, body):
                token = self._bearer()
                if not hmac.compare_digest(
                        _digest(token), _digest(outer.gateway_token)):
                    raise AuthRejected("not a gateway credential")
                if isinstance(body, dict) and body.get("op") == "pub":
                    body = body.get("msg", {})
                msgs = body if isinstance(body, list) else [body]
                acks = []
                try:
                    for wire in msgs:
                        acks.append(outer.node.put_message(wire))
                except (SchemaViolation, ForbiddenField, UnknownTable,
                        NoMatchingRule) as exc:
                    return self._reply(400, {"error": "rejected",
                                             "detail": str(exc),
                                             "acks": acks})
                self._reply(200, {"acks": acks})

            def _records(self, q):
                cam = q.get("cam")
                if not cam:
                    return self._reply(400, {"error": "cam required"})
                rows = outer.node.query_records(
                    cam, q.get("from", 0), q.get("to", 1 << 62))
                self._reply(200, {"cam": cam, "records": rows})

            def _occupancy(self, q):
                cam = q.get("cam")
                if not cam:
                    return self._reply(400, {"error": "cam required"})
                w = outer.node.latest_occupancy(cam)
                if w is None:
                    return self._reply(404, {"error": "no data"})
                self._reply(200, w)

            def _heatmap(self, q):
                site = q.get("site")
                if not site:
                    return self._reply(400, {"error": "site required"})
                try:
                    hours = float(q.get("hours", 24))
                except ValueError as exc:
                    raise MalformedRange(str(exc)) from exc
                grid = outer.node.heatmap(site, hours)
                if grid is None:
                    return self._reply(404, {"error": "no data"})
                self._reply(200, grid.to_wire())

            def _stream(self, q):
                last = self.headers.get("Last-Event-Id")
                if last is None:
                    last = q.get("last_event_id")
                if last is None:
                    last = outer.node.max_alert_id()
                site = q.get("site")
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Connection", "close")
                self.end_headers()
                idle = 0.0
                while not outer._closing.is_set():
                    batch = outer.node.wait_alerts(last, site=site,
                                                   timeout=0.2)
                    if not batch:
                        idle += 0.2
                        if idle >= SSE_KEEPALIVE_S:
                            idle = 0.0
                            try:
                                self.wfile.write(b": keepalive\n\n")
                                self.wfile.flush()
                            except (BrokenPipeError, ConnectionResetError,
                                    OSError):
                                return
                        continue
                    idle = 0.0
                    for wire in batch:
                        data = json.dumps(wire, separators=(",", ":"))
                        chunk = (f"id: {wire['alert_id']}\n"
                                 f"data: {data}\n\n").encode("utf-8")
                        try:
                            self.wfile.write(chunk)
                            self.wfile.flush()
                        except (BrokenPipeError, ConnectionResetError,
                                OSError):
                            return
                        last = wire["alert_id"]

            def _tokens(self, body, _admin_user):
                if "revoke" in body:
                    ok = outer.registry.revoke(str(body["revoke"]))
                    return self._reply(200, {"revoked": bool(ok)})
                user_id = body.get("user_id")
                scopes = body.get("scopes", [])
                try:
                    tok = outer.registry.issue(user_id, scopes)
                except ConfigInvalid as exc:
                    return self._reply(400, {"error": "bad request",
                                             "detail": str(exc)})
                self._reply(200, {"token": tok.token,
                                  "user_id": tok.user_id,
                                  "scopes": sorted(tok.scopes)})

        self._closing = threading.Event()
        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True, name="cloud-api")

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._closing.set()
        self._httpd.shutdown()
        self._httpd.server_close()
