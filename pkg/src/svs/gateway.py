"""Edge-to-cloud router: topics, rule matching, spool, and the push client.

Everything leaving the edge goes through here as a TopicMessage. Delivery
is at-least-once with per-topic ordering; the receiver deduplicates on
(topic, seq). While the cloud is unreachable, messages wait in a bounded
spool that sheds oldest analytics first and never sheds alerts.
"""
import json
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

from .analytics import HeatGrid, OccupancySnapshot, occupancy_to_wire
from .errors import (
    AuthRejected,
    ConfigInvalid,
    NoMatchingRule,
    SchemaViolation,
    SpoolOverflow,
)
from .model import AnalyticsRecord
from .scoring import EmergencyAlert

KINDS = ("analytics", "occupancy", "heatmap", "alert")
SITE_SCOPE = "_site"   # reserved camera segment for site-level payloads

DEFAULT_SPOOL_CAPACITY = 100_000
HEARTBEAT_S = 5.0
BACKOFF_BASE_S = 0.2
BACKOFF_CAP_S = 30.0
MAX_FRAME_BYTES = 16 * 1024 * 1024

_LEN = struct.Struct(">I")


def _valid_segment(seg):
    return bool(seg) and seg == seg.lower()


def validate_topic(topic):
    parts = topic.split("/")
    if len(parts) != 4 or parts[0] != "svs" or parts[3] not in KINDS \
            or not all(_valid_segment(p) for p in parts):
        raise SchemaViolation(f"malformed topic {topic!r}")
    return parts


def topic_for(item, site_id=None):
    """Deterministic topic for any outbound payload object."""
    if isinstance(item, EmergencyAlert):
        site = site_id or item.site_id
        return f"svs/{site}/{item.camera_id}/alert"
    if isinstance(item, OccupancySnapshot):
        if site_id is None:
            raise ValueError("occupancy topics need an explicit site")
        return f"svs/{site_id}/{item.camera_id}/occupancy"
    if isinstance(item, HeatGrid):
        site = site_id or item.site_id
        return f"svs/{site}/{SITE_SCOPE}/heatmap"
    if isinstance(item, (list, tuple)) and item \
            and all(isinstance(r, AnalyticsRecord) for r in item):
        if site_id is None:
            raise ValueError("analytics topics need an explicit site")
        cams = {r.camera_id for r in item}
        if len(cams) != 1:
            raise ValueError("one analytics batch spans one camera")
        return f"svs/{site_id}/{item[0].camera_id}/analytics"
    raise SchemaViolation(f"no topic for {type(item).__name__}")


@dataclass(frozen=True)
class TopicMessage:
    topic: str
    key: tuple     # (camera_id, timestamp ms)
    seq: int
    payload: object

    def __post_init__(self):
        parts = validate_topic(self.topic)
        cam, t = self.key
        if cam != parts[2]:
            raise SchemaViolation(
                f"key camera {cam!r} does not match topic {self.topic!r}")
        if not isinstance(t, int) or t < 0:
            raise SchemaViolation("key timestamp must be a nonnegative int")
        if self.seq < 1:
            raise SchemaViolation("seq starts at 1")
        object.__setattr__(self, "key", (cam, t))

    @property
    def kind(self):
        return self.topic.rsplit("/", 1)[1]

    def to_wire(self):
        return {"topic": self.topic, "cam": self.key[0], "t": self.key[1],
                "seq": self.seq, "payload": self.payload}

    @classmethod
    def from_wire(cls, obj):
        if not isinstance(obj, dict):
            raise SchemaViolation("topic message must be an object")
        extra = set(obj) - {"topic", "cam", "t", "seq", "payload"}
        if extra:
            raise SchemaViolation(f"unexpected message fields: {sorted(extra)}")
        try:
            return cls(topic=str(obj["topic"]),
                       key=(str(obj["cam"]), int(obj["t"])),
                       seq=int(obj["seq"]), payload=obj["payload"])
        except KeyError as exc:
            raise SchemaViolation(f"missing message field: {exc}") from exc


def wire_payload(item, indicator=None):
    """The closed outbound encoding of one payload object."""
    if isinstance(item, EmergencyAlert):
        return item.to_wire()
    if isinstance(item, OccupancySnapshot):
        if indicator is None:
            raise ValueError("occupancy payloads carry their indicator")
        return occupancy_to_wire(item, indicator)
    if isinstance(item, HeatGrid):
        return item.to_wire()
    if isinstance(item, (list, tuple)):
        return [r.to_wire() for r in item]
    raise SchemaViolation(f"no wire form for {type(item).__name__}")


class RoutingTable:
    """Pattern -> destination map. A pattern is a 4-segment topic where at
    most one segment is the wildcard '*'; the most literal match wins and
    same-specificity overlaps are rejected when the table loads."""

    def __init__(self, rules, alert_channel="alerts"):
        if not rules:
            raise ConfigInvalid("routing table needs at least one rule")
        self.alert_channel = alert_channel
        self._rules = []
        for pattern, dest in rules.items():
            parts = pattern.split("/")
            if len(parts) != 4 or parts.count("*") > 1 \
                    or not all(p == "*" or _valid_segment(p) for p in parts):
                raise ConfigInvalid(f"bad topic pattern {pattern!r}")
            if not dest:
                raise ConfigInvalid(f"empty destination for {pattern!r}")
            self._rules.append((parts, sum(p != "*" for p in parts), dest,
                                pattern))
        for i, (pa, na, _, ta) in enumerate(self._rules):
            for pb, nb, _, tb in self._rules[i + 1:]:
                if na == nb and all(
                        x == y or x == "*" or y == "*"
                        for x, y in zip(pa, pb)):
                    raise ConfigInvalid(
                        f"ambiguous patterns {ta!r} and {tb!r}")

    def match(self, topic):
        parts = validate_topic(topic)
        best = None
        for pat, lit, dest, pattern in self._rules:
            if all(p == "*" or p == s for p, s in zip(pat, parts)):
                if best is None or lit > best[0]:
                    best = (lit, dest)
        if best is None:
            raise NoMatchingRule(f"no rule matches {topic!r}")
        return best[1]

    def covers(self, topic):
        try:
            self.match(topic)
            return True
        except NoMatchingRule:
            return False


def route(msg, table):
    """Destinations for a message; alerts go to storage AND the channel."""
    dest = table.match(msg.topic)
    if msg.kind == "alert":
        return (dest, table.alert_channel)
    return (dest,)


class Spool:
    """FIFO of unacknowledged messages. Bounded for analytics-family
    traffic; alerts are always admitted, evicting the oldest non-alert
    when space is needed."""

    def __init__(self, capacity=DEFAULT_SPOOL_CAPACITY):
        if capacity < 1:
            raise ConfigInvalid("spool capacity must be positive")
        self.capacity = capacity
        self._q = deque()
        self.dropped_analytics = 0

    def __len__(self):
        return len(self._q)

    def push(self, msg):
        if len(self._q) >= self.capacity:
            victim = None
            for i, m in enumerate(self._q):
                if m.kind != "alert":
                    victim = i
                    break
            if victim is not None:
                del self._q[victim]
                self.dropped_analytics += 1
            elif msg.kind != "alert":
                raise SpoolOverflow(
                    f"spool full of alerts ({self.capacity})")
            # A full spool of alerts still takes one more alert.
        self._q.append(msg)

    def peek(self):
        return self._q[0] if self._q else None

    def pop(self):
        return self._q.popleft()

    def snapshot(self):
        return tuple(self._q)


def send_frame(sock, obj):
    payload = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise SchemaViolation("frame too large")
    sock.sendall(_LEN.pack(len(payload)) + payload)


def recv_frame(sock):
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    if length > MAX_FRAME_BYTES:
        raise SchemaViolation("frame too large")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class GatewayClient:
    """Pushes TopicMessages to the cloud over a persistent authenticated
    connection, surviving cloud restarts.

    publish() assigns the per-topic seq, spools, and returns; a single
    sender thread drains the spool in order, reconnecting with exponential
    backoff and retransmitting the unacked head, so delivery is
    at-least-once and per-topic ordered.
    """

    def __init__(self, host, port, token, *, site_id,
                 spool_capacity=DEFAULT_SPOOL_CAPACITY,
                 heartbeat_s=HEARTBEAT_S, backoff_base_s=BACKOFF_BASE_S,
                 backoff_cap_s=BACKOFF_CAP_S, io_timeout_s=10.0,
                 auto_start=True):
        self.host = host
        self.port = port
        self.token = token
        self.site_id = site_id
        self.heartbeat_s = heartbeat_s
        self.backoff_base_s = backoff_base_s
        self.backoff_cap_s = backoff_cap_s
        self.io_timeout_s = io_timeout_s
        self._spool = Spool(spool_capacity)
        self._seq = {}
        self._acked = {}
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._stop = threading.Event()
        self._fatal = None
        self._sock = None
        self.sent = 0
        self.retries = 0
        self.reconnects = 0
        self.nacked = 0
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="gateway-sender")
        if auto_start:
            self._thread.start()

    def start(self):
        if not self._thread.is_alive():
            self._thread.start()

    # -- producer side -------------------------------------------------

    def wrap(self, item, indicator=None):
        topic = topic_for(item, self.site_id)
        payload = wire_payload(item, indicator)
        if isinstance(item, EmergencyAlert):
            key = (item.camera_id, item.record_time)
        elif isinstance(item, OccupancySnapshot):
            key = (item.camera_id, item.window_end)
        elif isinstance(item, HeatGrid):
            key = (SITE_SCOPE, int(item.window_to))
        else:
            key = (item[0].camera_id, item[-1].record_time)
        with self._lock:
            seq = self._seq.get(topic, 0) + 1
            self._seq[topic] = seq
        return TopicMessage(topic=topic, key=key, seq=seq, payload=payload)

    def publish(self, item, indicator=None):
        """Queue one payload (or prebuilt TopicMessage) for delivery."""
        if self._fatal is not None:
            raise self._fatal
        msg = item if isinstance(item, TopicMessage) \
            else self.wrap(item, indicator)
        with self._cond:
            self._spool.push(msg)
            self._cond.notify_all()
        return msg

    def pending(self):
        with self._lock:
            return len(self._spool)

    @property
    def dropped_analytics(self):
        with self._lock:
            return self._spool.dropped_analytics

    def acked(self):
        with self._lock:
            return dict(self._acked)

    def flush(self, timeout=30.0):
        """Block until everything queued so far is acked (or timeout)."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._spool) > 0:
                if self._fatal is not None:
                    raise self._fatal
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._cond.wait(min(left, 0.2))
        return True

    def close(self):
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        if self._thread.is_alive():
            self._thread.join(timeout=10.0)
        self._close_sock()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- sender thread ---------------------------------------------------

    def _close_sock(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _connect(self):
        sock = socket.create_connection((self.host, self.port),
                                        timeout=self.io_timeout_s)
        sock.settimeout(self.io_timeout_s)
        with self._lock:
            resume = dict(self._acked)
        send_frame(sock, {"op": "hello", "token": self.token,
                          "resume": resume})
        reply = recv_frame(sock)
        if reply is None:
            raise OSError("connection closed during hello")
        if reply.get("op") == "err":
            raise AuthRejected(reply.get("error", "rejected"))
        if reply.get("op") != "helo":
            raise OSError(f"unexpected hello reply {reply!r}")
        have = reply.get("have", {})
        # Anything the cloud already holds needs no retransmit.
        with self._cond:
            while True:
                head = self._spool.peek()
                if head is None or head.seq > have.get(head.topic, 0):
                    break
                self._spool.pop()
                self._acked[head.topic] = head.seq
                self._cond.notify_all()
        return sock

    def _run(self):
        backoff = self.backoff_base_s
        while not self._stop.is_set():
            if self._sock is None:
                try:
                    self._sock = self._connect()
                    backoff = self.backoff_base_s
                    with self._lock:
                        self.reconnects += 1
                except AuthRejected as exc:
                    with self._cond:
                        self._fatal = exc
                        self._cond.notify_all()
                    return
                except (OSError, SchemaViolation, ValueError):
                    self._close_sock()
                    self._stop.wait(backoff)
                    backoff = min(backoff * 2, self.backoff_cap_s)
                    continue
            with self._cond:
                msg = self._spool.peek()
                if msg is None:
                    self._cond.wait(self.heartbeat_s)
                    msg = self._spool.peek()
            try:
                if msg is None:
                    send_frame(self._sock, {"op": "hb"})
                    reply = recv_frame(self._sock)
                    if reply is None:
                        raise OSError("closed")
                    continue
                send_frame(self._sock, {"op": "pub",
                                        "msg": msg.to_wire()})
                while True:
                    reply = recv_frame(self._sock)
                    if reply is None:
                        raise OSError("closed before ack")
                    if reply.get("op") == "hb":
                        continue
                    break
                if reply.get("op") == "err":
                    if reply.get("error") == "auth":
                        with self._cond:
                            self._fatal = AuthRejected("revoked")
                            self._cond.notify_all()
                        return
                    raise OSError(f"cloud error {reply!r}")
                if reply.get("op") == "nack" \
                        and reply.get("topic") == msg.topic \
                        and reply.get("seq") == msg.seq:
                    # Cloud rejected the payload itself; retrying the same
                    # bytes cannot succeed, so drop it and move on.
                    with self._cond:
                        head = self._spool.peek()
                        if head is msg:
                            self._spool.pop()
                        self.nacked += 1
                        self._cond.notify_all()
                    continue
                if reply.get("op") != "ack" \
                        or reply.get("topic") != msg.topic \
                        or reply.get("seq") != msg.seq:
                    raise OSError(f"bad ack {reply!r}")
                with self._cond:
                    head = self._spool.peek()
                    if head is msg:
                        self._spool.pop()
                    self._acked[msg.topic] = msg.seq
                    self.sent += 1
                    self._cond.notify_all()
            except (OSError, TimeoutError, SchemaViolation, ValueError):
                self._close_sock()
                if msg is not None:
                    with self._lock:
                        self.retries += 1
                self._stop.wait(backoff)
                backoff = min(backoff * 2, self.backoff_cap_s)


class CaptureGateway:
    """In-process stand-in for GatewayClient: same wrap/publish surface,
    everything lands in .messages. Lets pipelines run without sockets and
    gives audits a complete outbound corpus."""

    def __init__(self, site_id):
        self.site_id = site_id
        self._seq = {}
        self.messages = []

    def wrap(self, item, indicator=None):
        topic = topic_for(item, self.site_id)
        payload = wire_payload(item, indicator)
        if isinstance(item, EmergencyAlert):
            key = (item.camera_id, item.record_time)
        elif isinstance(item, OccupancySnapshot):
            key = (item.camera_id, item.window_end)
        elif isinstance(item, HeatGrid):
            key = (SITE_SCOPE, int(item.window_to))
        else:
            key = (item[0].camera_id, item[-1].record_time)
        seq = self._seq.get(topic, 0) + 1
        self._seq[topic] = seq
        return TopicMessage(topic=topic, key=key, seq=seq, payload=payload)

    def publish(self, item, indicator=None):
        msg = item if isinstance(item, TopicMessage) \
            else self.wrap(item, indicator)
        self.messages.append(msg)
        return msg

    def pending(self):
        return 0

    def flush(self, timeout=0.0):
        return True

    def close(self):
        pass
