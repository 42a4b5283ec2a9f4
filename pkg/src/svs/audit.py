"""Executable privacy compliance over captures, store snapshots, and epochs.

Every check here is mechanical and offline: rules inspect artifacts (an
outbound capture log, a store snapshot, epoch metadata, the declared schema
registry), never the live pipeline. Each rule belongs to one of the four
protection lenses the system is organized around:

  algorithm  outputs are bounded derived quantities, nothing appearance-like
  system     only the declared result channels ever leave the edge
  model      identity matching stays epoch-bound; no schema can carry a key
  data       closed field sets, no pose arrays, no blobs, bounded retention

Findings carry hashes, field paths, and scalar metadata as evidence, never
payload arrays, so a report is itself safe to export. Rules are annotated
with the regulation cells they operationalize (GDPR, HIPAA, CCPA, ADPPA);
the annotations are documented interpretation, a traceability aid, not a
claim of legal compliance.

The audit consumes wire dicts and metadata tuples only. It cannot receive
keypoints that the capture does not contain, and the rotation check takes
(epoch_id, created_at) integers, so projection weights are unreachable by
construction.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import ConfigInvalid
from .gateway import KINDS, TopicMessage
from .model import ACTIONS, FORBIDDEN_FIELD_TOKENS
from .schemas import (
    BLOB_CAPACITY_BYTES,
    PayloadSchema,
    REGISTRY,
    all_schemas,
    transmitted_schemas,
)

LENSES = ("algorithm", "system", "model", "data")
SEVERITIES = ("violation", "warning", "info")
REGULATIONS = ("GDPR", "HIPAA", "CCPA", "ADPPA")

DEFAULT_BLOB_LIMIT = BLOB_CAPACITY_BYTES
DEFAULT_GRACE_MS = 60_000

# A pose is 17 joints at (x, y, conf) or (x, y, conf, vis): 51 or 68 reals.
POSE_JOINTS = 17
POSE_FLAT_LENGTHS = (POSE_JOINTS * 3, POSE_JOINTS * 4)

OCCUPANCY_LEVELS = ("low", "normal", "high")
ALERT_KINDS = ("object", "anomaly", "occupancy")
ALERT_SEVERITIES = ("critical", "warning", "notice")

_ENVELOPE_KEYS = {"topic", "cam", "t", "seq", "payload"}


@dataclass(frozen=True)
class AuditRule:
    """One mechanical check, annotated with the regulation cells it maps to.

    regulation_cells pairs an act with the cell of its summary row that the
    rule operationalizes; the pairing is interpretation, documented here so
    a reviewer can dispute it in one place.
    covers: schema names whose payloads this rule inspects, used by the
    completeness cross-check.
    """

    rule_id: str
    lens: str
    description: str
    regulation_cells: tuple[tuple[str, str], ...]
    covers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lens not in LENSES:
            raise ValueError(f"unknown lens {self.lens!r}")
        for act, _cell in self.regulation_cells:
            if act not in REGULATIONS:
                raise ValueError(f"unknown regulation {act!r}")

    @property
    def regulation_refs(self) -> tuple[str, ...]:
        return tuple(act for act, _ in self.regulation_cells)


_TRANSMITTED = tuple(s.name for s in transmitted_schemas())

RULES: dict[str, AuditRule] = {r.rule_id: r for r in (
    AuditRule(
        rule_id="outbound.closed_fields",
        lens="data",
        description="every outbound field is in the declared closed set "
                    "for its channel kind",
        regulation_cells=(("ADPPA", "minimized collection"),
                          ("GDPR", "data minimisation")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="outbound.no_pose_arrays",
        lens="data",
        description="no pose-shaped real array (17 joints flat or nested) "
                    "leaves the edge",
        regulation_cells=(("GDPR", "biometric data"),
                          ("CCPA", "personal information"),
                          ("ADPPA", "sensitive covered data")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="outbound.blob_limit",
        lens="data",
        description="no opaque string large enough to carry image data",
        regulation_cells=(("HIPAA", "identifiable imagery"),
                          ("ADPPA", "sensitive covered data")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="outbound.forbidden_names",
        lens="data",
        description="no field name contains a forbidden token "
                    "(image/pixel/face carriers)",
        regulation_cells=(("CCPA", "personal information"),
                          ("ADPPA", "minimized collection")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="outbound.bounded_values",
        lens="algorithm",
        description="per-identity outputs are bounded derived quantities: "
                    "scores in range, actions from the closed vocabulary, "
                    "counts nonnegative integers",
        regulation_cells=(("GDPR", "data minimisation"),
                          ("CCPA", "biometric information")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="outbound.result_channels",
        lens="system",
        description="every captured frame addresses a declared result "
                    "channel with a well-formed envelope",
        regulation_cells=(("GDPR", "purpose limitation"),
                          ("HIPAA", "minimum necessary")),
        covers=_TRANSMITTED,
    ),
    AuditRule(
        rule_id="retention.identity_ttl",
        lens="data",
        description="no identity-linked row outlives the retention TTL",
        regulation_cells=(("GDPR", "consistent with the purpose"),),
        covers=("stored_identity_row",),
    ),
    AuditRule(
        rule_id="rotation.epoch_age",
        lens="model",
        description="the matching epoch rotates within its period plus grace",
        regulation_cells=(("GDPR", "anonymisation"),
                          ("CCPA", "de-identified data")),
    ),
    AuditRule(
        rule_id="rotation.schema_capacity",
        lens="model",
        description="no declared wire or storage field has the capacity to "
                    "carry a projection matrix or raw embedding",
        regulation_cells=(("GDPR", "anonymisation"),
                          ("ADPPA", "de-identified data")),
        covers=tuple(REGISTRY),
    ),
)}


@dataclass(frozen=True)
class AuditFinding:
    """One check outcome. Violations always carry concrete evidence."""

    lens: str
    rule_id: str
    severity: str
    evidence: str
    regulation_refs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lens not in LENSES:
            raise ValueError(f"unknown lens {self.lens!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.severity == "violation" and not self.evidence:
            raise ValueError("violations must carry evidence")
        for act in self.regulation_refs:
            if act not in REGULATIONS:
                raise ValueError(f"unknown regulation {act!r}")

    def to_wire(self) -> dict:
        return {"lens": self.lens, "rule": self.rule_id,
                "severity": self.severity, "evidence": self.evidence,
                "regulations": list(self.regulation_refs)}


def _finding(rule_id: str, severity: str, evidence: str) -> AuditFinding:
    rule = RULES[rule_id]
    return AuditFinding(lens=rule.lens, rule_id=rule_id, severity=severity,
                        evidence=evidence,
                        regulation_refs=rule.regulation_refs)


def payload_hash(payload) -> str:
    """Stable short digest used as evidence instead of payload content."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def coverage_gaps() -> tuple[str, ...]:
    """Transmitted schemas no audit rule inspects. Must be empty."""
    covered: set[str] = set()
    for rule in RULES.values():
        covered.update(rule.covers)
    return tuple(sorted({s.name for s in transmitted_schemas()} - covered))


def check_coverage() -> None:
    gaps = coverage_gaps()
    if gaps:
        raise ConfigInvalid(f"outbound schemas without an audit rule: {gaps}")


# -- capture walk ------------------------------------------------------------

_KIND_SCHEMA: dict[str, PayloadSchema] = {
    "analytics": REGISTRY["analytics_record"],
    "occupancy": REGISTRY["occupancy_snapshot"],
    "heatmap": REGISTRY["heatmap_pane"],
    "alert": REGISTRY["emergency_alert"],
}
assert set(_KIND_SCHEMA) == set(KINDS)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _all_integral(values) -> bool:
    return all(_is_int(v) or (isinstance(v, float) and v == int(v))
               for v in values)


def _walk(value, path: str, key=None):
    """Yield (path, dict_key_or_None, value) exactly once per node."""
    yield (path, key, value)
    if isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{path}.{k}", str(k))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}[{i}]")


def _pose_shaped(value) -> bool:
    """Flat 51/68 real list, or 17 nested triples/quads, with at least one
    fractional element. Integral lists are count grids or id lists; pose
    coordinates are real-valued, so integrality is the separating test."""
    if not isinstance(value, list):
        return False
    if len(value) in POSE_FLAT_LENGTHS and all(_is_number(v) for v in value):
        return not _all_integral(value)
    if len(value) == POSE_JOINTS \
            and all(isinstance(r, list) and len(r) in (3, 4)
                    and all(_is_number(v) for v in r) for r in value):
        flat = [v for r in value for v in r]
        return not _all_integral(flat)
    return False


def _content_findings(payload, where: str, blob_limit: int) -> list:
    """Schema-independent walks: forbidden names, pose shapes, blobs.

    Evidence names the path and size only; the flagged content itself must
    never appear in a finding.
    """
    out = []
    for path, key, value in _walk(payload, "payload"):
        if key is not None:
            lk = key.lower()
            for tok in FORBIDDEN_FIELD_TOKENS:
                if tok in lk:
                    out.append(_finding(
                        "outbound.forbidden_names", "violation",
                        f"{where} key {key!r} at {path} matches "
                        f"forbidden token {tok!r}"))
                    break
        if _pose_shaped(value):
            out.append(_finding(
                "outbound.no_pose_arrays", "violation",
                f"{where} array at {path} has pose shape "
                f"(len={len(value)})"))
        if isinstance(value, str) and len(value.encode("utf-8")) > blob_limit:
            out.append(_finding(
                "outbound.blob_limit", "violation",
                f"{where} string at {path} is "
                f"{len(value.encode('utf-8'))} bytes "
                f"(limit {blob_limit})"))
    return out


def _bound(ok: bool, where: str, what: str) -> Optional[AuditFinding]:
    if ok:
        return None
    return _finding("outbound.bounded_values", "violation", f"{where} {what}")


def _check_record(obj: dict, where: str) -> list:
    out = []
    checks = (
        (_is_int(obj.get("gid")) and obj.get("gid", 0) >= 1,
         "gid must be a positive integer"),
        (isinstance(obj.get("cam"), str) and bool(obj.get("cam")),
         "cam must be a nonempty string"),
        (_is_int(obj.get("t")) and obj.get("t", -1) >= 0,
         "t must be a nonnegative integer"),
        (isinstance(obj.get("bbox"), list) and len(obj.get("bbox", ())) == 4
         and all(_is_number(v) and math.isfinite(v) for v in obj["bbox"]),
         "bbox must be four finite numbers"),
        (_is_number(obj.get("anomaly"))
         and 0.0 <= float(obj.get("anomaly", -1)) <= 1.0,
         "anomaly must be a number in [0, 1]"),
        (obj.get("action") in ACTIONS,
         f"action must be one of {list(ACTIONS)}"),
    )
    for ok, what in checks:
        f = _bound(ok, where, what)
        if f:
            out.append(f)
    return out


def _check_occupancy(obj: dict, where: str) -> list:
    out = []
    checks = (
        (isinstance(obj.get("cam"), str) and bool(obj.get("cam")),
         "cam must be a nonempty string"),
        (_is_int(obj.get("t")) and obj.get("t", -1) >= 0,
         "t must be a nonnegative integer"),
        (_is_int(obj.get("count")) and obj.get("count", -1) >= 0,
         "count must be a nonnegative integer"),
        (_is_int(obj.get("cum_today")) and obj.get("cum_today", -1) >= 0,
         "cum_today must be a nonnegative integer"),
        (_is_int(obj.get("site_cum")) and obj.get("site_cum", -1) >= 0,
         "site_cum must be a nonnegative integer"),
        (_is_number(obj.get("ratio")) and math.isfinite(obj.get("ratio", -1))
         and obj.get("ratio", -1) >= 0,
         "ratio must be a finite nonnegative number"),
        (obj.get("level") in OCCUPANCY_LEVELS,
         f"level must be one of {list(OCCUPANCY_LEVELS)}"),
    )
    for ok, what in checks:
        f = _bound(ok, where, what)
        if f:
            out.append(f)
    return out


def _check_heatmap(obj: dict, where: str) -> list:
    out = []
    shape = obj.get("shape")
    counts = obj.get("counts")
    shape_ok = (isinstance(shape, list) and len(shape) == 2
                and all(_is_int(v) and v >= 1 for v in shape))
    # counts arrive row-major as a list of rows
    counts_ok = (isinstance(counts, list)
                 and all(isinstance(row, list)
                         and all(_is_int(v) and v >= 0 for v in row)
                         for row in counts))
    checks = (
        (isinstance(obj.get("site"), str) and bool(obj.get("site")),
         "site must be a nonempty string"),
        (_is_int(obj.get("from")) and _is_int(obj.get("to"))
         and 0 <= obj.get("from", 1) <= obj.get("to", 0),
         "window must satisfy 0 <= from <= to"),
        (_is_number(obj.get("cell_m")) and obj.get("cell_m", 0) > 0,
         "cell_m must be positive"),
        (isinstance(obj.get("origin"), list)
         and len(obj.get("origin", ())) == 2
         and all(_is_number(v) and math.isfinite(v) for v in obj["origin"]),
         "origin must be two finite numbers"),
        (shape_ok, "shape must be two positive integers"),
        (counts_ok, "counts must be rows of nonnegative integers"),
        (not (shape_ok and counts_ok)
         or (len(counts) == shape[0]
             and all(len(row) == shape[1] for row in counts)),
         "counts grid must match the declared shape"),
        (_is_int(obj.get("overflow")) and obj.get("overflow", -1) >= 0,
         "overflow must be a nonnegative integer"),
    )
    for ok, what in checks:
        f = _bound(ok, where, what)
        if f:
            out.append(f)
    return out


def _check_alert(obj: dict, where: str) -> list:
    out = []
    gids = obj.get("gids")
    checks = (
        (isinstance(obj.get("alert_id"), str) and bool(obj.get("alert_id")),
         "alert_id must be a nonempty string"),
        (obj.get("rule") in ALERT_KINDS,
         f"rule must be one of {list(ALERT_KINDS)}"),
        (isinstance(obj.get("cam"), str) and bool(obj.get("cam")),
         "cam must be a nonempty string"),
        (_is_int(obj.get("t")) and obj.get("t", -1) >= 0,
         "t must be a nonnegative integer"),
        (obj.get("severity") in ALERT_SEVERITIES,
         f"severity must be one of {list(ALERT_SEVERITIES)}"),
        (_is_number(obj.get("score")) and math.isfinite(obj.get("score", -1))
         and obj.get("score", -1) >= 0,
         "score must be finite and nonnegative"),
        (isinstance(gids, list)
         and all(_is_number(v) and v == int(v) and v >= 1 for v in gids),
         "gids must be integral identifiers"),
        (isinstance(obj.get("detail"), str),
         "detail must be a string"),
    )
    for ok, what in checks:
        f = _bound(ok, where, what)
        if f:
            out.append(f)
    return out


_KIND_CHECK = {"analytics": _check_record, "occupancy": _check_occupancy,
               "heatmap": _check_heatmap, "alert": _check_alert}


def _closed_set_findings(obj: dict, schema: PayloadSchema,
                         where: str) -> list:
    extra = sorted(set(obj) - schema.field_names())
    return [_finding("outbound.closed_fields", "violation",
                     f"{where} field {k!r} outside the closed set "
                     f"for {schema.name}")
            for k in extra]


def audit_payloads(messages: Iterable, *,
                   blob_limit: int = DEFAULT_BLOB_LIMIT
                   ) -> tuple[AuditFinding, ...]:
    """Walk a captured outbound corpus against the declared closed schemas.

    Accepts TopicMessage objects or their wire dicts (capture-file lines).
    Malformed entries become findings, never exceptions: a tampered capture
    must produce a failing report, not a crashed audit.
    """
    check_coverage()
    findings: list[AuditFinding] = []
    for i, msg in enumerate(messages):
        wire = msg.to_wire() if isinstance(msg, TopicMessage) else msg
        if not isinstance(wire, dict):
            findings.append(_finding(
                "outbound.result_channels", "violation",
                f"frame[{i}] is not an object "
                f"(got {type(wire).__name__})"))
            continue
        topic = wire.get("topic")
        payload = wire.get("payload")
        where = (f"frame[{i}] topic={topic} seq={wire.get('seq')} "
                 f"sha256={payload_hash(payload)}")

        for k in sorted(set(wire) - _ENVELOPE_KEYS):
            findings.append(_finding(
                "outbound.closed_fields", "violation",
                f"{where} envelope field {k!r} outside the closed set"))

        parts = str(topic).split("/") if isinstance(topic, str) else []
        kind = parts[3] if len(parts) == 4 else None
        envelope_ok = (len(parts) == 4 and parts[0] == "svs"
                       and kind in _KIND_SCHEMA
                       and wire.get("cam") == parts[2]
                       and _is_int(wire.get("t")) and wire.get("t", -1) >= 0
                       and _is_int(wire.get("seq"))
                       and wire.get("seq", 0) >= 1)
        if not envelope_ok:
            findings.append(_finding(
                "outbound.result_channels", "violation",
                f"{where} envelope does not address a declared result "
                f"channel"))

        findings.extend(_content_findings(payload, where, blob_limit))

        if kind not in _KIND_SCHEMA:
            continue
        schema = _KIND_SCHEMA[kind]
        check = _KIND_CHECK[kind]
        if kind == "analytics":
            if not (isinstance(payload, list) and payload
                    and all(isinstance(r, dict) for r in payload)):
                findings.append(_bound(
                    False, where,
                    "analytics payload must be a nonempty array of records"))
                continue
            objs = payload
        else:
            if not isinstance(payload, dict):
                findings.append(_bound(
                    False, where, f"{kind} payload must be an object"))
                continue
            objs = [payload]
        for j, obj in enumerate(objs):
            at = f"{where} record[{j}]" if kind == "analytics" else where
            findings.extend(_closed_set_findings(obj, schema, at))
            findings.extend(check(obj, at))
    return tuple(findings)


# -- store walk --------------------------------------------------------------

_QUERY_HORIZON = 2 ** 62


def audit_retention(store, now_ms: int, policy) -> tuple[AuditFinding, ...]:
    """One violation per identity row strictly older than the TTL.

    Rows the purge would drop at `now_ms` but that are still visible in the
    snapshot are the violations; evidence is the row key, never the row.
    """
    ttl = policy.identity_ttl_ms
    findings = []
    for cam in store.cameras():
        for r in store.query(cam, 0, _QUERY_HORIZON).records:
            age = now_ms - r.record_time
            if age > ttl:
                findings.append(_finding(
                    "retention.identity_ttl", "violation",
                    f"cam={r.camera_id} t={r.record_time} gid={r.global_id} "
                    f"age_ms={age} ttl_ms={ttl}"))
    return tuple(findings)


# -- epoch metadata + static schema walk --------------------------------------

def schema_walk() -> tuple[AuditFinding, ...]:
    """Static check over every declared schema: no field may have the
    capacity to carry a projection matrix (large real array) or an opaque
    blob big enough to smuggle one. Integer count grids are exempt by
    declared kind."""
    findings = []
    for schema in all_schemas():
        for f in schema.fields:
            if f.matrix_capable():
                cap = "unbounded" if f.max_floats is None else f.max_floats
                findings.append(_finding(
                    "rotation.schema_capacity", "violation",
                    f"{schema.name}.{f.name}: float_array capacity {cap}"))
            if f.blob_capable():
                cap = "unbounded" if f.max_bytes is None else f.max_bytes
                findings.append(_finding(
                    "rotation.schema_capacity", "violation",
                    f"{schema.name}.{f.name}: str capacity {cap}"))
    return tuple(findings)


def audit_rotation(epoch_metadata, now_ms: int, *,
                   rotation_period_ms: int,
                   grace_ms: int = DEFAULT_GRACE_MS
                   ) -> tuple[AuditFinding, ...]:
    """Check epoch age against period + grace, plus the static schema walk.

    epoch_metadata is the pair (epoch_id, created_at) of plain integers.
    The signature takes nothing else on purpose: key material cannot reach
    this function.
    """
    try:
        epoch_id, created_at = epoch_metadata
    except (TypeError, ValueError) as exc:
        raise ValueError(
            "epoch metadata must be the pair (epoch_id, created_at)") from exc
    if not (_is_int(epoch_id) and _is_int(created_at)):
        raise ValueError("epoch metadata must be plain integers")
    if rotation_period_ms <= 0:
        raise ConfigInvalid(f"rotation_period_ms: {rotation_period_ms}")
    if grace_ms < 0:
        raise ConfigInvalid(f"grace_ms: {grace_ms}")

    findings = []
    age = now_ms - created_at
    limit = rotation_period_ms + grace_ms
    if age > limit:
        findings.append(_finding(
            "rotation.epoch_age", "violation",
            f"epoch={epoch_id} age_ms={age} limit_ms={limit}"))
    findings.extend(schema_walk())
    return tuple(findings)


# -- report -------------------------------------------------------------------

def capture_window(messages: Iterable) -> tuple[Optional[int], Optional[int]]:
    """(min, max) envelope timestamp across a capture, or (None, None)."""
    lo = hi = None
    for msg in messages:
        wire = msg.to_wire() if isinstance(msg, TopicMessage) else msg
        t = wire.get("t") if isinstance(wire, dict) else None
        if _is_int(t):
            lo = t if lo is None else min(lo, t)
            hi = t if hi is None else max(hi, t)
    return lo, hi


def config_hash(config) -> str:
    if config is None:
        return "unconfigured"
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"),
                      default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ComplianceReport:
    """Findings grouped under the four lenses. Pass means zero violations;
    warnings and notes never fail a run."""

    findings: tuple[AuditFinding, ...]
    lens_status: tuple[tuple[str, str], ...]
    config_digest: str
    t_from: Optional[int]
    t_to: Optional[int]

    @property
    def passed(self) -> bool:
        return all(status == "pass" for _, status in self.lens_status)

    def violations(self) -> tuple[AuditFinding, ...]:
        return tuple(f for f in self.findings if f.severity == "violation")

    def to_wire(self) -> dict:
        rules = [{"rule": r.rule_id, "lens": r.lens,
                  "description": r.description,
                  "cells": [f"{act}: {cell}"
                            for act, cell in r.regulation_cells],
                  "violations": sum(1 for f in self.findings
                                    if f.rule_id == r.rule_id
                                    and f.severity == "violation")}
                 for r in RULES.values()]
        return {"passed": self.passed,
                "lenses": {lens: status for lens, status in self.lens_status},
                "config": self.config_digest,
                "window": [self.t_from, self.t_to],
                "rules": rules,
                "findings": [f.to_wire() for f in self.findings]}

    def to_text(self) -> str:
        lines = ["privacy compliance report",
                 f"config {self.config_digest} "
                 f"window {self.t_from}..{self.t_to}"]
        for lens, status in self.lens_status:
            lines.append(f"lens {lens}: {status}")
            for r in RULES.values():
                if r.lens != lens:
                    continue
                n = sum(1 for f in self.findings if f.rule_id == r.rule_id
                        and f.severity == "violation")
                cells = "; ".join(f"{a}: {c}" for a, c in r.regulation_cells)
                lines.append(f"  {r.rule_id} [{cells}] violations={n}")
        for f in self.findings:
            lines.append(f"{f.severity} {f.rule_id} {f.evidence}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _finding_order(f: AuditFinding):
    return (LENSES.index(f.lens), f.rule_id, SEVERITIES.index(f.severity),
            f.evidence)


def compliance_report(findings: Iterable[AuditFinding], *,
                      config=None,
                      t_from: Optional[int] = None,
                      t_to: Optional[int] = None) -> ComplianceReport:
    """Group findings by lens. Same findings in, identical report out."""
    ordered = tuple(sorted(findings, key=_finding_order))
    for f in ordered:
        if not isinstance(f, AuditFinding):
            raise TypeError(f"not a finding: {f!r}")
    failed = {f.lens for f in ordered if f.severity == "violation"}
    status = tuple((lens, "fail" if lens in failed else "pass")
                   for lens in LENSES)
    return ComplianceReport(findings=ordered, lens_status=status,
                            config_digest=config_hash(config),
                            t_from=t_from, t_to=t_to)
