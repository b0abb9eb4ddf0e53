"""Applying device messages to the document store.

Messages arrive on five topics; only ``input`` ever mutates a document.
Writes are last-writer-wins on ``sent_at``: a message older than the
document it targets is dropped as stale, and re-applying any message is a
no-op (same payload, same timestamp, same resulting document). A message
either applies completely or not at all — payloads are validated before
any field is touched.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from .geo import GeoPoint
from .model import (
    UPDATABLE_FIELDS,
    DeviceDocument,
    DeviceMessage,
    Topic,
    canonical_service_name,
)
from .store import DocumentStore, UnknownServiceError

_CREATION_KEYS = {"service_name", "display_name", "address", "location"}
_SCALAR = (bool, int, float, str, type(None))


class ApplyOutcome(enum.Enum):
    CREATED = "created"
    APPLIED = "applied"
    STALE = "stale"
    IGNORED = "ignored"
    REJECTED = "rejected"


@dataclass(frozen=True)
class ApplyResult:
    outcome: ApplyOutcome
    node_id: str
    topic: Topic
    error: str | None = None
    document: DeviceDocument | None = None


@dataclass
class IngestReport:
    """Counters for one batch / stream of messages."""

    applied: int = 0
    created: int = 0
    stale: int = 0
    ignored: int = 0
    rejected: int = 0
    errors: list[str] = field(default_factory=list)

    def record(self, result: ApplyResult) -> None:
        if result.outcome is ApplyOutcome.APPLIED:
            self.applied += 1
        elif result.outcome is ApplyOutcome.CREATED:
            self.created += 1
        elif result.outcome is ApplyOutcome.STALE:
            self.stale += 1
        elif result.outcome is ApplyOutcome.IGNORED:
            self.ignored += 1
        else:
            self.rejected += 1
            if result.error:
                self.errors.append(f"{result.node_id}: {result.error}")

    @property
    def total(self) -> int:
        return self.applied + self.created + self.stale + self.ignored + self.rejected

    def to_json(self) -> dict[str, Any]:
        return {
            "applied": self.applied,
            "created": self.created,
            "stale": self.stale,
            "ignored": self.ignored,
            "rejected": self.rejected,
            "errors": list(self.errors),
        }


def _decode_location(raw: Any) -> GeoPoint:
    if isinstance(raw, GeoPoint):
        return raw
    if isinstance(raw, Mapping):
        return GeoPoint(float(raw["lat"]), float(raw["lon"]))
    if isinstance(raw, (list, tuple)) and len(raw) == 2:
        return GeoPoint(float(raw[0]), float(raw[1]))
    raise ValueError(f"location must be {{lat, lon}} or [lat, lon], got {raw!r}")


def _payload_violations(payload: Mapping[str, Any]) -> list[str]:
    """Validate every field before anything is written (all-or-nothing)."""
    errs: list[str] = []
    if "rate" in payload and payload["rate"] is not None:
        try:
            r = float(payload["rate"])
            if not (0.0 <= r <= 5.0):
                errs.append(f"rate {r} outside [0, 5]")
        except (TypeError, ValueError):
            errs.append(f"rate {payload['rate']!r} is not a number")
    if "occupancy_factor" in payload and payload["occupancy_factor"] is not None:
        try:
            o = float(payload["occupancy_factor"])
            if not (0.0 <= o <= 1.0):
                errs.append(f"occupancy_factor {o} outside [0, 1]")
        except (TypeError, ValueError):
            errs.append(f"occupancy_factor {payload['occupancy_factor']!r} is not a number")
    if "location" in payload:
        try:
            _decode_location(payload["location"])
        except (ValueError, KeyError, TypeError) as exc:
            errs.append(str(exc))
    if "extra" in payload:
        if not isinstance(payload["extra"], Mapping):
            errs.append("extra must be an object")
        else:
            for k, v in payload["extra"].items():
                if not isinstance(v, _SCALAR):
                    errs.append(f"extra[{k!r}] must be a scalar, got {type(v).__name__}")
    for key in ("display_name", "address"):
        if key in payload and not isinstance(payload[key], str):
            errs.append(f"{key} must be a string")
    return errs


def _locate(store: DocumentStore, node_id: str, service_hint: str | None):
    """Find the collection holding node_id. Node ids are globally unique."""
    if service_hint:
        try:
            coll = store.collection(service_hint)
        except UnknownServiceError:
            return None, None
        return coll, coll.get(node_id)
    for coll in store.collections.values():
        doc = coll.get(node_id)
        if doc is not None:
            return coll, doc
    return None, None


def apply_message(
    store: DocumentStore, msg: DeviceMessage, *, allow_create: bool = True
) -> ApplyResult:
    """Apply one message. Only ``input`` mutates; the rest are acknowledged."""
    if msg.topic is not Topic.INPUT:
        return ApplyResult(ApplyOutcome.IGNORED, msg.node_id, msg.topic)

    payload = dict(msg.payload)
    errs = _payload_violations(payload)
    if errs:
        return ApplyResult(ApplyOutcome.REJECTED, msg.node_id, msg.topic, error="; ".join(errs))

    hint = payload.get("service_name")
    hint = canonical_service_name(str(hint)) if hint else None
    coll, existing = _locate(store, msg.node_id, hint)
    if coll is None and hint is None:
        return ApplyResult(
            ApplyOutcome.REJECTED, msg.node_id, msg.topic,
            error="unknown node and no service_name to create under",
        )
    if coll is None:
        return ApplyResult(
            ApplyOutcome.REJECTED, msg.node_id, msg.topic, error=f"unknown service {hint!r}"
        )

    with coll.lock:  # read-modify-write must be atomic per collection
        existing = coll.get(msg.node_id)
        if existing is None:
            if not allow_create:
                return ApplyResult(
                    ApplyOutcome.REJECTED, msg.node_id, msg.topic, error="unknown node"
                )
            missing = _CREATION_KEYS - set(payload)
            if missing:
                return ApplyResult(
                    ApplyOutcome.REJECTED, msg.node_id, msg.topic,
                    error=f"unknown node; creation needs {sorted(missing)}",
                )
            doc = DeviceDocument(
                node_id=msg.node_id,
                service_name=coll.service_name,
                display_name=payload["display_name"],
                address=payload["address"],
                location=_decode_location(payload["location"]),
                rate=payload.get("rate"),
                occupancy_factor=payload.get("occupancy_factor"),
                extra=dict(payload.get("extra", {})),
                updated_at=msg.sent_at,
            )
            coll.upsert(doc)
            return ApplyResult(ApplyOutcome.CREATED, msg.node_id, msg.topic, document=doc)

        if msg.sent_at < existing.updated_at:
            return ApplyResult(ApplyOutcome.STALE, msg.node_id, msg.topic, document=existing)

        changes: dict[str, Any] = {"updated_at": msg.sent_at}
        for key in UPDATABLE_FIELDS:
            if key not in payload:
                continue
            if key == "location":
                changes[key] = _decode_location(payload[key])
            elif key == "extra":
                merged = dict(existing.extra)
                for k, v in payload[key].items():  # None deletes a key
                    if v is None:
                        merged.pop(k, None)
                    else:
                        merged[k] = v
                changes[key] = merged
            elif key in ("rate", "occupancy_factor"):
                changes[key] = None if payload[key] is None else float(payload[key])
            else:
                changes[key] = payload[key]
        doc = existing.with_updates(**changes)
        coll.upsert(doc)
        return ApplyResult(ApplyOutcome.APPLIED, msg.node_id, msg.topic, document=doc)


def ingest_stream(
    store: DocumentStore, messages: Iterable[DeviceMessage], *, allow_create: bool = True
) -> IngestReport:
    report = IngestReport()
    for msg in messages:
        report.record(apply_message(store, msg, allow_create=allow_create))
    return report


def parse_message_lines(lines: Iterable[str]) -> Iterator[DeviceMessage]:
    """Decode NDJSON message lines; raises ValueError with the line number."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield DeviceMessage.from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc


# -- synthetic live traffic ----------------------------------------------------


@dataclass(frozen=True)
class StreamSpec:
    """Shape of a synthetic message stream for simulations."""

    n_messages: int = 1000
    seed: int = 0
    start_time: float = 1_735_776_000.0
    interval_s: float = 0.05
    input_share: float = 0.6  # remaining mass spread over the other four topics


def simulate_messages(store: DocumentStore, spec: StreamSpec) -> list[DeviceMessage]:
    """Deterministic stream of plausible updates against existing nodes."""
    nodes: list[DeviceDocument] = []
    for name in sorted(store.collections):
        coll = store.collections[name]
        with coll.lock:
            nodes.extend(coll.documents[k] for k in sorted(coll.documents))
    if not nodes:
        raise ValueError("store has no documents to simulate against")

    rng = np.random.default_rng(spec.seed)
    other = [Topic.OUTPUT, Topic.SETTING, Topic.COMMAND, Topic.STATE]
    out: list[DeviceMessage] = []
    for i in range(spec.n_messages):
        doc = nodes[int(rng.integers(0, len(nodes)))]
        sent_at = spec.start_time + i * spec.interval_s
        if rng.random() < spec.input_share:
            payload: dict[str, Any] = {"service_name": doc.service_name}
            roll = rng.random()
            if roll < 0.70:
                payload["occupancy_factor"] = round(float(rng.uniform(0.0, 1.0)), 3)
            elif roll < 0.85:
                payload["rate"] = round(float(rng.uniform(2.5, 5.0)), 1)
            elif doc.extra:
                k = sorted(doc.extra)[int(rng.integers(0, len(doc.extra)))]
                v = doc.extra[k]
                if isinstance(v, bool):
                    payload["extra"] = {k: bool(rng.random() < 0.5)}
                elif isinstance(v, int):
                    payload["extra"] = {k: int(rng.poisson(5))}
                elif isinstance(v, float):
                    payload["extra"] = {k: round(float(v * rng.uniform(0.9, 1.1)), 2)}
                else:
                    payload["occupancy_factor"] = round(float(rng.uniform(0.0, 1.0)), 3)
            else:
                payload["occupancy_factor"] = round(float(rng.uniform(0.0, 1.0)), 3)
            out.append(DeviceMessage(doc.node_id, Topic.INPUT, payload, sent_at))
        else:
            topic = other[int(rng.integers(0, 4))]
            out.append(
                DeviceMessage(doc.node_id, topic, {"status": "ok", "seq": i}, sent_at)
            )
    return out
