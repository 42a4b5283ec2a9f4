"""Event intake: file replay and socket listening, line-level validation
accounting, and the bounded per-camera dispatch boundary.

This is the system edge where upstream detector/pose services would
attach. Everything downstream sees only validated, immutable events; a
malformed line is counted and skipped, never fatal.
"""
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    ConfigInvalid,
    ForbiddenField,
    MalformedLine,
    NonMonotonicFrame,
    SchemaViolation,
    SourceUnavailable,
    UnknownCamera,
)
from .model import parse_event_line

SOURCE_KINDS = ("file_replay", "socket_listener")
DEFAULT_QUEUE_SIZE = 256
DEFAULT_MAX_SKEW_MS = 500

_PARSE_ERRORS = (MalformedLine, SchemaViolation, ForbiddenField)


@dataclass(frozen=True)
class StreamSource:
    """Where events come from: a replay file or a TCP listen address."""

    kind: str
    address_or_path: str
    replay_speed: float = 1.0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigInvalid(f"source.kind must be one of {SOURCE_KINDS}")
        if not self.address_or_path:
            raise ConfigInvalid("source.address_or_path must be nonempty")
        if not (self.replay_speed > 0):
            raise ConfigInvalid("source.replay_speed must be positive")
        if self.kind == "socket_listener":
            host, _, port = self.address_or_path.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigInvalid(
                    f"listen address {self.address_or_path!r} is not "
                    "host:port")


@dataclass
class IngestStats:
    """Intake accounting. After a full run, accepted + rejected equals
    the lines offered: every line is decided exactly once."""

    offered: int = 0
    accepted: int = 0
    rejected: int = 0
    by_kind: dict = field(default_factory=dict)
    last_timestamp: dict = field(default_factory=dict)

    def reject(self, kind):
        self.rejected += 1
        self.by_kind[kind] = self.by_kind.get(kind, 0) + 1

    def accept(self, event):
        self.accepted += 1
        self.last_timestamp[event.camera_id] = event.timestamp

    @property
    def balanced(self):
        return self.accepted + self.rejected == self.offered


class LogicalClock:
    """Event-time clock: the monotone max of observed timestamps.

    Retention, rotation, and pacing all key off this instead of the wall
    clock, so replays exercise every time-based invariant deterministically.
    """

    def __init__(self, start=0):
        self._now = start
        self._lock = threading.Lock()

    def now(self):
        with self._lock:
            return self._now

    def advance(self, t):
        with self._lock:
            if t > self._now:
                self._now = t
            return self._now


class EventSource:
    """Iterator of validated events from one StreamSource.

    File mode reads the whole file in order; with pace=True delivery is
    slowed to replay_speed times real time (never sped up by dropping).
    Socket mode accepts any number of producer connections and yields
    lines in arrival order until close().
    """

    _SENTINEL = object()

    def __init__(self, source, stats=None, pace=False):
        self.source = source
        self.stats = stats if stats is not None else IngestStats()
        self._pace = pace
        self._lines = None
        self._fh = None
        self._queue = None
        self._listener = None
        self._conns = []
        self._closed = False
        self._t0 = None
        self._wall0 = None
        self.port = None
        if source.kind == "file_replay":
            try:
                self._fh = open(source.address_or_path, "r",
                                encoding="utf-8")
            except OSError as exc:
                raise SourceUnavailable(str(exc)) from exc
            self._lines = iter(self._fh)
        else:
            host, _, port = source.address_or_path.rpartition(":")
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                s.bind((host, int(port)))
            except OSError as exc:
                s.close()
                raise SourceUnavailable(str(exc)) from exc
            s.listen(16)
            self.port = s.getsockname()[1]
            self._listener = s
            self._queue = queue.Queue()
            threading.Thread(target=self._accept, daemon=True,
                             name="ingest-accept").start()

    # -- socket plumbing -------------------------------------------------

    def _accept(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._read_conn, args=(conn,),
                             daemon=True, name="ingest-conn").start()

    def _read_conn(self, conn):
        try:
            with conn, conn.makefile("r", encoding="utf-8") as fh:
                for line in fh:
                    self._queue.put(line)
        except (OSError, UnicodeDecodeError):
            return

    # -- iteration ---------------------------------------------------------

    def __iter__(self):
        return self

    def __next__(self):
        while True:
            line = self._next_line()
            if line is None:
                raise StopIteration
            line = line.strip()
            if not line:
                continue   # blank separators are not offered lines
            self.stats.offered += 1
            try:
                event = parse_event_line(line)
            except _PARSE_ERRORS as exc:
                self.stats.reject(type(exc).__name__)
                continue
            if self._pace:
                self._pace_to(event.timestamp)
            return event

    def _next_line(self):
        if self._lines is not None:
            return next(self._lines, None)
        while True:
            item = self._queue.get()
            if item is self._SENTINEL:
                return None
            return item

    def _pace_to(self, t):
        if self._t0 is None:
            self._t0 = t
            self._wall0 = time.monotonic()
            return
        due = self._wall0 + (t - self._t0) / (1000.0 *
                                              self.source.replay_speed)
        while True:
            lag = due - time.monotonic()
            if lag <= 0:
                return
            time.sleep(min(lag, 0.2))

    def close(self):
        self._closed = True
        if self._fh is not None:
            self._fh.close()
        if self._listener is not None:
            self._listener.close()
        for c in list(self._conns):
            try:
                c.close()
            except OSError:
                pass
        if self._queue is not None:
            self._queue.put(self._SENTINEL)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def open_stream(source, stats=None, pace=False):
    """EventSource for a StreamSource; SourceUnavailable if it cannot
    be opened or bound."""
    return EventSource(source, stats=stats, pace=pace)


class Dispatcher:
    """Bounded per-camera FIFO boundary between one reader and the
    per-camera pipelines.

    A full queue blocks the producer instead of dropping: a dropped frame
    would silently break tracking continuity, while backpressure only
    costs latency. Rejections (unknown camera, per-camera time regression,
    cross-camera skew beyond max_skew_ms) are counted and raised; the
    caller decides to continue.
    """

    def __init__(self, handlers, *, stats=None,
                 queue_size=DEFAULT_QUEUE_SIZE,
                 max_skew_ms=DEFAULT_MAX_SKEW_MS, workers=True):
        if queue_size < 1:
            raise ConfigInvalid("dispatch.queue_size must be >= 1")
        if max_skew_ms < 0:
            raise ConfigInvalid("dispatch.max_skew_ms must be nonnegative")
        if not handlers:
            raise ConfigInvalid("dispatcher needs at least one camera")
        self.stats = stats if stats is not None else IngestStats()
        self.clock = LogicalClock()
        self.max_skew_ms = max_skew_ms
        self._handlers = dict(handlers)
        self._last_t = {}
        self._error = None
        self._queues = {}
        self._threads = []
        if workers:
            for cam in self._handlers:
                q = queue.Queue(maxsize=queue_size)
                self._queues[cam] = q
                th = threading.Thread(target=self._worker, args=(cam, q),
                                      daemon=True, name=f"pipeline-{cam}")
                th.start()
                self._threads.append(th)

    def dispatch(self, event):
        cam = event.camera_id
        handler = self._handlers.get(cam)
        if handler is None:
            self.stats.reject("UnknownCamera")
            raise UnknownCamera(cam)
        last = self._last_t.get(cam)
        if last is not None and event.timestamp < last:
            self.stats.reject("NonMonotonicFrame")
            raise NonMonotonicFrame(
                f"{cam}: t={event.timestamp} after t={last}")
        if self.clock.now() - event.timestamp > self.max_skew_ms:
            self.stats.reject("ClockSkew")
            raise NonMonotonicFrame(
                f"{cam}: t={event.timestamp} lags site time "
                f"{self.clock.now()} beyond {self.max_skew_ms} ms")
        self._last_t[cam] = event.timestamp
        self.clock.advance(event.timestamp)
        self.stats.accept(event)
        q = self._queues.get(cam)
        if q is None:
            handler(event)
        else:
            q.put(event)   # blocks while the camera pipeline is behind

    def _worker(self, cam, q):
        handler = self._handlers[cam]
        while True:
            event = q.get()
            try:
                if event is None:
                    return
                if self._error is None:
                    # after a pipeline fault, keep draining so the
                    # producer never deadlocks on a dead consumer
                    handler(event)
            except Exception as exc:   # noqa: BLE001 - surfaced at flush
                if self._error is None:
                    self._error = exc
            finally:
                q.task_done()

    def flush(self):
        """Wait until every queued event is processed; re-raise the first
        pipeline fault if one occurred."""
        for q in self._queues.values():
            q.join()
        if self._error is not None:
            raise RuntimeError("camera pipeline failed") from self._error

    def close(self):
        for q in self._queues.values():
            q.put(None)
        for th in self._threads:
            th.join(timeout=30.0)
        self._queues = {}
        self._threads = []
        if self._error is not None:
            raise RuntimeError("camera pipeline failed") from self._error


def pump(events, dispatcher):
    """Feed events into the dispatcher until the iterator ends, counting
    routing rejections without stopping. Returns the shared stats."""
    for event in events:
        try:
            dispatcher.dispatch(event)
        except (UnknownCamera, NonMonotonicFrame):
            continue
    dispatcher.flush()
    return dispatcher.stats
