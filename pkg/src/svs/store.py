"""Edge metadata store: append-only record log with time/camera queries,
retention purge, and per-bucket occupancy baselines.

Identity-level rows are AnalyticsRecords and live 24 hours by default;
anonymous per-bucket occupancy aggregates carry no identities and live 30
days, which is what lets baselines survive the identity purge. Durability
is write-ahead: an insert is on disk before it is acknowledged.
"""
import json
import os
import struct
import threading
import zlib
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from .errors import ConfigInvalid, SchemaViolation, StorageFull
from .model import AnalyticsRecord

MAGIC = b"SVS1"
FORMAT_VERSION = 1
_HEADER = MAGIC + struct.pack(">H", FORMAT_VERSION)
_FRAME = struct.Struct(">II")   # payload length, crc32

BUCKET_MS = 15 * 60 * 1000
DAY_MS = 24 * 60 * 60 * 1000
BUCKETS_PER_DAY = DAY_MS // BUCKET_MS

DEFAULT_IDENTITY_TTL_MS = DAY_MS
DEFAULT_AGGREGATE_TTL_MS = 30 * DAY_MS
DEFAULT_SEGMENT_BYTES = 4 * 1024 * 1024


@dataclass(frozen=True)
class RetentionPolicy:
    identity_ttl_ms: int = DEFAULT_IDENTITY_TTL_MS
    aggregate_ttl_ms: int = DEFAULT_AGGREGATE_TTL_MS
    heatmaps_enabled: bool = True

    def __post_init__(self):
        if self.identity_ttl_ms <= 0 or self.aggregate_ttl_ms <= 0:
            raise ConfigInvalid("retention TTLs must be positive")
        if self.identity_ttl_ms > self.aggregate_ttl_ms:
            raise ConfigInvalid(
                "identity TTL must not exceed the aggregate TTL")
        # A day of identity records is justified only by the heat-map
        # window; without heat maps, keep less.
        if not self.heatmaps_enabled and self.identity_ttl_ms >= DAY_MS:
            raise ConfigInvalid(
                "identity TTL of a day or more requires heat maps enabled")


@dataclass(frozen=True)
class StoredBatch:
    camera_id: str
    t_from: int
    t_to: int
    records: tuple

    def __post_init__(self):
        times = [r.record_time for r in self.records]
        if times != sorted(times):
            raise SchemaViolation("batch records must be time-sorted")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def bucket_index(t_ms):
    return (t_ms % DAY_MS) // BUCKET_MS


def day_index(t_ms):
    return t_ms // DAY_MS


def _frame(payload):
    return _FRAME.pack(len(payload), zlib.crc32(payload)) + payload


def _scan_segment(path):
    """Yield (offset, payload) for intact records; truncate a torn tail."""
    with open(path, "rb") as f:
        head = f.read(len(_HEADER))
        if len(head) < len(_HEADER) or head[:4] != MAGIC:
            raise SchemaViolation(f"{path}: bad segment header")
        version = struct.unpack(">H", head[4:6])[0]
        if version != FORMAT_VERSION:
            raise SchemaViolation(f"{path}: unsupported format {version}")
        out = []
        good_end = len(_HEADER)
        while True:
            off = f.tell()
            hdr = f.read(_FRAME.size)
            if not hdr:
                break
            if len(hdr) < _FRAME.size:
                break
            length, crc = _FRAME.unpack(hdr)
            payload = f.read(length)
            if len(payload) < length or zlib.crc32(payload) != crc:
                break
            out.append((off, payload))
            good_end = f.tell()
    size = os.path.getsize(path)
    if size > good_end:
        with open(path, "r+b") as f:
            f.truncate(good_end)
    return out


class RecordStore:
    """Single-writer embedded store. Readers share the writer's lock, so
    every query sees a consistent snapshot; payloads are cached in memory
    and the segment log is the durable copy."""

    def __init__(self, root, *, sync=True, max_bytes=None,
                 segment_bytes=DEFAULT_SEGMENT_BYTES):
        if max_bytes is not None and max_bytes <= 0:
            raise ConfigInvalid("max_bytes must be positive when set")
        self.root = root
        self.sync = sync
        self.max_bytes = max_bytes
        self.segment_bytes = segment_bytes
        self._lock = threading.RLock()
        self._times = {}      # camera_id -> [record_time] sorted
        self._recs = {}       # camera_id -> [wire dict] parallel
        self._aggs = {}       # (cam, day, bucket) -> distinct-id count
        self._open = {}       # (cam, day, bucket) -> set of global ids
        self._watermark = {}  # camera_id -> max record_time seen
        self._log_bytes = 0
        self._fh = None
        self._active = None
        os.makedirs(root, exist_ok=True)
        self._recover()

    # -- disk layout -------------------------------------------------

    def _seg_path(self, name):
        return os.path.join(self.root, name)

    def _manifest_path(self):
        return os.path.join(self.root, "MANIFEST.json")

    def _read_manifest(self):
        try:
            with open(self._manifest_path(), "r", encoding="utf-8") as f:
                m = json.load(f)
        except FileNotFoundError:
            return {"version": 1, "segments": [], "next": 1}
        if m.get("version") != 1:
            raise SchemaViolation("unsupported manifest version")
        return m

    def _write_manifest(self, segments, next_id):
        tmp = self._manifest_path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump({"version": 1, "segments": segments, "next": next_id},
                      f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._manifest_path())

    def _sidecar_path(self, name):
        return self._seg_path(name.replace(".log", ".idx"))

    def _write_sidecar(self, name, entries, log_bytes):
        with open(self._sidecar_path(name), "w", encoding="utf-8") as f:
            json.dump({"version": 1, "log_bytes": log_bytes,
                       "count": len(entries), "entries": entries}, f)

    def _recover(self):
        m = self._read_manifest()
        self._segments = list(m["segments"])
        self._next_id = m["next"]
        # Segments not in the manifest are leftovers of an interrupted
        # rewrite; they are either stale copies or incomplete ones.
        keep = set(self._segments) | {n.replace(".log", ".idx")
                                      for n in self._segments}
        for name in os.listdir(self.root):
            if name.startswith("seg-") and name not in keep:
                os.remove(self._seg_path(name))
        for name in self._segments:
            for _off, payload in _scan_segment(self._seg_path(name)):
                self._ingest(json.loads(payload.decode("utf-8")))
            self._log_bytes += os.path.getsize(self._seg_path(name))
        if not self._segments:
            self._roll_segment()
        else:
            self._active = self._segments[-1]
            self._fh = open(self._seg_path(self._active), "ab")

    def _roll_segment(self):
        if self._fh is not None:
            self._seal_active()
        name = f"seg-{self._next_id:08d}.log"
        self._next_id += 1
        fh = open(self._seg_path(name), "wb")
        fh.write(_HEADER)
        fh.flush()
        if self.sync:
            os.fsync(fh.fileno())
        self._segments.append(name)
        self._write_manifest(self._segments, self._next_id)
        self._fh = fh
        self._active = name
        self._log_bytes += len(_HEADER)

    def _seal_active(self):
        if self._fh is None:
            return
        self._fh.flush()
        if self.sync:
            os.fsync(self._fh.fileno())
        size = self._fh.tell()
        self._fh.close()
        entries = [[off, len(p)] for off, p
                   in _scan_segment(self._seg_path(self._active))]
        self._write_sidecar(self._active, entries, size)
        self._fh = None

    def _append(self, obj):
        payload = json.dumps(obj, separators=(",", ":"),
                             sort_keys=True).encode("utf-8")
        frame = _frame(payload)
        if self.max_bytes is not None \
                and self._log_bytes + len(frame) > self.max_bytes:
            raise StorageFull(
                f"store at {self._log_bytes} bytes, cap {self.max_bytes}")
        if self._fh.tell() + len(frame) > self.segment_bytes:
            self._roll_segment()
        self._fh.write(frame)
        self._fh.flush()
        if self.sync:
            os.fsync(self._fh.fileno())
        self._log_bytes += len(frame)

    # -- state maintenance -------------------------------------------

    def _ingest(self, obj):
        kind = obj.get("k")
        if kind == "rec":
            rec = AnalyticsRecord.from_wire(obj["d"])
            self._remember(rec)
        elif kind == "agg":
            d = obj["d"]
            key = (d["cam"], d["day"], d["bucket"])
            self._aggs[key] = d["n"]
            self._open.pop(key, None)
        else:
            raise SchemaViolation(f"unknown stored row kind {kind!r}")

    def _remember(self, rec):
        cam, t = rec.camera_id, rec.record_time
        times = self._times.setdefault(cam, [])
        recs = self._recs.setdefault(cam, [])
        wire = rec.to_wire()
        if not times or t >= times[-1]:
            times.append(t)
            recs.append(wire)
        else:
            i = bisect_right(times, t)
            times.insert(i, t)
            recs.insert(i, wire)
        wm = self._watermark.get(cam, -1)
        key = (cam, day_index(t), bucket_index(t))
        bucket_end = key[1] * DAY_MS + (key[2] + 1) * BUCKET_MS
        # Late rows past an already-advanced watermark never reopen a
        # finalized bucket; they stay queryable but leave aggregates alone.
        if key not in self._aggs and bucket_end > wm:
            self._open.setdefault(key, set()).add(rec.global_id)
        if t > wm:
            self._watermark[cam] = t

    def _finalize_ready(self, cam):
        wm = self._watermark.get(cam, -1)
        ready = [k for k in self._open
                 if k[0] == cam and k[1] * DAY_MS + (k[2] + 1) * BUCKET_MS
                 <= wm]
        for key in sorted(ready):
            self._finalize(key)

    def _finalize(self, key):
        n = len(self._open[key])
        self._append({"k": "agg", "d": {"cam": key[0], "day": key[1],
                                        "bucket": key[2], "n": n}})
        del self._open[key]
        self._aggs[key] = n

    # -- public API ----------------------------------------------------

    def insert(self, record):
        """Durably append one record; raises before any ack on bad input."""
        if isinstance(record, dict):
            record = AnalyticsRecord.from_wire(record)
        elif not isinstance(record, AnalyticsRecord):
            raise SchemaViolation(
                f"insert takes an analytics record, got {type(record).__name__}")
        with self._lock:
            self._append({"k": "rec", "d": record.to_wire()})
            self._remember(record)
            self._finalize_ready(record.camera_id)

    def query(self, camera_id, t_from, t_to):
        if t_from > t_to:
            raise ValueError("query range must satisfy from <= to")
        with self._lock:
            times = self._times.get(camera_id, [])
            lo = bisect_left(times, t_from)
            hi = bisect_left(times, t_to)
            recs = tuple(AnalyticsRecord.from_wire(w)
                         for w in self._recs.get(camera_id, [])[lo:hi])
        return StoredBatch(camera_id=camera_id, t_from=t_from, t_to=t_to,
                           records=recs)

    def count(self):
        with self._lock:
            return sum(len(v) for v in self._times.values())

    def cameras(self):
        with self._lock:
            return sorted(self._times)

    def oldest_identity_ms(self):
        with self._lock:
            firsts = [t[0] for t in self._times.values() if t]
            return min(firsts) if firsts else None

    def baseline_for(self, camera_id, bucket, now_ms=None):
        """Mean occupancy of this 15-minute bucket over prior days, from
        the aggregate table only. None marks no history (cold start)."""
        if not 0 <= bucket < BUCKETS_PER_DAY:
            raise ValueError(f"bucket must be in [0, {BUCKETS_PER_DAY})")
        with self._lock:
            today = day_index(now_ms) if now_ms is not None else None
            vals = [n for (c, d, b), n in self._aggs.items()
                    if c == camera_id and b == bucket
                    and (today is None or d < today)]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def purge_expired(self, now_ms, policy):
        """Drop expired rows and rewrite the log without them. A row at
        exactly its TTL boundary is expired."""
        with self._lock:
            for cam in sorted(self._watermark):
                wm = self._watermark[cam]
                ready = [k for k in self._open if k[0] == cam
                         and k[1] * DAY_MS + (k[2] + 1) * BUCKET_MS
                         <= max(wm, now_ms)]
                for key in sorted(ready):
                    self._finalize(key)
            id_cut = now_ms - policy.identity_ttl_ms
            agg_cut = now_ms - policy.aggregate_ttl_ms
            purged = 0
            for cam in list(self._times):
                times = self._times[cam]
                hi = bisect_right(times, id_cut)
                if hi:
                    purged += hi
                    self._times[cam] = times[hi:]
                    self._recs[cam] = self._recs[cam][hi:]
                if not self._times[cam]:
                    del self._times[cam]
                    del self._recs[cam]
            for key in sorted(self._aggs):
                end = key[1] * DAY_MS + (key[2] + 1) * BUCKET_MS
                if end <= agg_cut:
                    del self._aggs[key]
                    purged += 1
            self._rewrite()
            return purged

    def _rewrite(self):
        """Rebuild segments from live rows only. New segments are complete
        and synced before the manifest swaps to them, so a crash leaves
        either the old log or the new one, never a mix; expired values
        leave no residue once the old files go."""
        self._seal_active()
        old = list(self._segments)
        rows = []
        for cam in sorted(self._times):
            rows.extend({"k": "rec", "d": w} for w in self._recs[cam])
        rows.extend({"k": "agg", "d": {"cam": k[0], "day": k[1],
                                       "bucket": k[2], "n": self._aggs[k]}}
                    for k in sorted(self._aggs))
        new_names = []
        fh = None
        size = 0
        entries = []
        for obj in rows:
            payload = json.dumps(obj, separators=(",", ":"),
                                 sort_keys=True).encode("utf-8")
            frame = _frame(payload)
            if fh is None or size + len(frame) > self.segment_bytes:
                if fh is not None:
                    fh.flush()
                    os.fsync(fh.fileno())
                    fh.close()
                    self._write_sidecar(new_names[-1], entries, size)
                name = f"seg-{self._next_id:08d}.log"
                self._next_id += 1
                new_names.append(name)
                fh = open(self._seg_path(name), "wb")
                fh.write(_HEADER)
                size = len(_HEADER)
                entries = []
            entries.append([size, len(payload)])
            fh.write(frame)
            size += len(frame)
        if fh is not None:
            fh.flush()
            os.fsync(fh.fileno())
            fh.close()
            self._write_sidecar(new_names[-1], entries, size)
        self._segments = new_names
        self._fh = None
        self._log_bytes = sum(os.path.getsize(self._seg_path(n))
                              for n in new_names)
        self._roll_segment()
        for name in old:
            os.remove(self._seg_path(name))
            try:
                os.remove(self._sidecar_path(name))
            except FileNotFoundError:
                pass

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._seal_active()
                self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
