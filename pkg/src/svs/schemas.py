"""Declared shapes of every payload the system stores or transmits.

The privacy audit does not trust code paths; it walks this registry and the
live payloads against it. Every field that can cross a trust boundary is
listed here with its kind and capacity, so "could this field carry an image
or a raw embedding" is a static question.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

# A float array at or above this many elements is treated as matrix-capable:
# big enough to smuggle an image patch or a raw feature map.
MATRIX_CAPACITY_FLOATS = 128

# Opaque strings at or above this size are treated as blob-capable.
BLOB_CAPACITY_BYTES = 4096


@dataclass(frozen=True)
class FieldSpec:
    """One field of a payload schema.

    kind: "int" | "float" | "str" | "bool" | "float_array" | "int_array" |
    "object" | "array"
    max_floats: for float_array, the maximum element count (None = unbounded)
    max_bytes: for str, the maximum encoded size (None = short/enum-like)
    item: for array/object kinds, the nested schema name

    int_array is reserved for aggregate count grids: the irreversibility
    audit targets real-valued carriers (embeddings, keypoints, pixel
    patches), and integer dwell counts are anonymous aggregates, so the
    kind is declared distinct on purpose.
    """

    name: str
    kind: str
    max_floats: Optional[int] = None
    max_bytes: Optional[int] = None
    item: Optional[str] = None

    def matrix_capable(self) -> bool:
        if self.kind == "float_array":
            return self.max_floats is None or self.max_floats >= MATRIX_CAPACITY_FLOATS
        return False

    def blob_capable(self) -> bool:
        if self.kind == "str":
            return self.max_bytes is None or self.max_bytes >= BLOB_CAPACITY_BYTES
        return False


@dataclass(frozen=True)
class PayloadSchema:
    """A named payload shape plus where it flows."""

    name: str
    direction: str  # "edge_internal" | "edge_to_cloud" | "cloud_api" | "stored"
    fields: tuple[FieldSpec, ...] = ()

    def field_names(self) -> set[str]:
        return {f.name for f in self.fields}


def _f(name, kind, **kw) -> FieldSpec:
    return FieldSpec(name=name, kind=kind, **kw)


# bbox is 4 floats, a keypoint set is 51; both far below matrix capacity.
REGISTRY: dict[str, PayloadSchema] = {}


def _register(schema: PayloadSchema) -> PayloadSchema:
    REGISTRY[schema.name] = schema
    return schema


DETECTION = _register(PayloadSchema(
    name="detection",
    direction="edge_internal",
    fields=(
        _f("cls", "str", max_bytes=32),
        _f("conf", "float"),
        _f("bbox", "float_array", max_floats=4),
        _f("kp", "float_array", max_floats=51),
    ),
))

DETECTION_EVENT = _register(PayloadSchema(
    name="detection_event",
    direction="edge_internal",
    fields=(
        _f("v", "int"),
        _f("site", "str", max_bytes=64),
        _f("cam", "str", max_bytes=64),
        _f("t", "int"),
        _f("frame", "int"),
        _f("dets", "array", item="detection"),
    ),
))

ANALYTICS_RECORD = _register(PayloadSchema(
    name="analytics_record",
    direction="edge_to_cloud",
    fields=(
        _f("gid", "int"),
        _f("cam", "str", max_bytes=64),
        _f("t", "int"),
        _f("bbox", "float_array", max_floats=4),
        _f("anomaly", "float"),
        _f("action", "str", max_bytes=16),
    ),
))

OCCUPANCY_SNAPSHOT = _register(PayloadSchema(
    name="occupancy_snapshot",
    direction="edge_to_cloud",
    fields=(
        _f("cam", "str", max_bytes=64),
        _f("t", "int"),
        _f("count", "int"),
        _f("cum_today", "int"),
        _f("site_cum", "int"),
        _f("ratio", "float"),
        _f("level", "str", max_bytes=8),
    ),
))

HEATMAP_PANE = _register(PayloadSchema(
    name="heatmap_pane",
    direction="edge_to_cloud",
    fields=(
        _f("site", "str", max_bytes=64),
        _f("from", "int"),
        _f("to", "int"),
        _f("cell_m", "float"),
        _f("origin", "float_array", max_floats=2),
        _f("shape", "int_array", max_floats=2),
        # Row-major dwell counts, exact integers; aggregate, not identity.
        _f("counts", "int_array"),
        _f("overflow", "int"),
    ),
))

EMERGENCY_ALERT = _register(PayloadSchema(
    name="emergency_alert",
    direction="edge_to_cloud",
    fields=(
        _f("alert_id", "str", max_bytes=64),
        _f("rule", "str", max_bytes=64),
        _f("cam", "str", max_bytes=64),
        _f("t", "int"),
        _f("severity", "str", max_bytes=16),
        _f("score", "float"),
        _f("gids", "float_array", max_floats=64),
        _f("detail", "str", max_bytes=256),
    ),
))

STORED_IDENTITY_ROW = _register(PayloadSchema(
    name="stored_identity_row",
    direction="stored",
    fields=ANALYTICS_RECORD.fields,
))

STORED_AGGREGATE_ROW = _register(PayloadSchema(
    name="stored_aggregate_row",
    direction="stored",
    fields=(
        _f("kind", "str", max_bytes=16),
        _f("cam", "str", max_bytes=64),
        _f("bucket_start", "int"),
        _f("bucket_end", "int"),
        _f("payload", "object", item="aggregate_payload"),
    ),
))

AGGREGATE_PAYLOAD = _register(PayloadSchema(
    name="aggregate_payload",
    direction="stored",
    fields=(
        _f("count_sum", "int"),
        _f("count_max", "int"),
        _f("samples", "int"),
        _f("counts", "int_array"),
    ),
))


def all_schemas() -> tuple[PayloadSchema, ...]:
    return tuple(REGISTRY.values())


def transmitted_schemas() -> tuple[PayloadSchema, ...]:
    return tuple(s for s in REGISTRY.values() if s.direction in ("edge_to_cloud", "cloud_api"))


def stored_schemas() -> tuple[PayloadSchema, ...]:
    return tuple(s for s in REGISTRY.values() if s.direction == "stored")
