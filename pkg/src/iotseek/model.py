"""Domain value types: regions, services, device documents, and device messages.

Everything here is an immutable value object. The internal JSON encoding is
snake_case; ``to_result_json`` emits the human-facing field names used in
retrieval results ("Service Type", "Rate", ...). The two encodings map 1:1,
see README for the field table.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .geo import BoundingBox, GeoPoint

_WS_RE = re.compile(r"\s+")

# Fields a device input message may overwrite on its document.
UPDATABLE_FIELDS = frozenset(
    {"display_name", "address", "location", "rate", "occupancy_factor", "extra"}
)


def canonical_service_name(name: str) -> str:
    """Lower-case, single-spaced canonical form of a service-type name."""
    return _WS_RE.sub(" ", name.strip()).lower()


class ValidationError(ValueError):
    """One or more invariant violations, collected per field."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Region:
    """A named coverage area. Queries located inside any registered region
    can be answered from the live document store."""

    region_id: str
    name: str
    bounds: BoundingBox

    def contains(self, p: GeoPoint) -> bool:
        return self.bounds.contains(p)


def region_contains(region: Region, p: GeoPoint) -> bool:
    """True iff ``p`` lies inside the region's bounds (edges inclusive)."""
    return region.contains(p)


@dataclass(frozen=True)
class ServiceDescriptor:
    """A service type ("dog park") with its description and optional embedding."""

    service_id: str
    name: str
    description: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name or self.name != canonical_service_name(self.name):
            raise ValueError(f"service name {self.name!r} is not canonical")
        if self.embedding is not None:
            norm = math.sqrt(sum(x * x for x in self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding of {self.name!r} is not unit-norm ({norm})")


class Topic(str, enum.Enum):
    """The five device-message topics. Decoding any other string fails."""

    INPUT = "input"
    OUTPUT = "output"
    SETTING = "setting"
    COMMAND = "command"
    STATE = "state"


@dataclass(frozen=True)
class DeviceMessage:
    """One message from a device, applying an update to its document."""

    node_id: str
    topic: Topic
    payload: Mapping[str, Any]
    sent_at: float

    def __post_init__(self) -> None:
        if not isinstance(self.topic, Topic):
            raise ValueError(f"unknown topic {self.topic!r}")
        if self.topic is Topic.INPUT:
            unknown = set(self.payload) - UPDATABLE_FIELDS - {"service_name", "node_id"}
            if unknown:
                raise ValueError(f"input payload keys not updatable: {sorted(unknown)}")

    def to_json(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "topic": self.topic.value,
            "payload": dict(self.payload),
            "sent_at": self.sent_at,
        }

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "DeviceMessage":
        return DeviceMessage(
            node_id=str(obj["node_id"]),
            topic=Topic(obj["topic"]),
            payload=dict(obj.get("payload", {})),
            sent_at=float(obj["sent_at"]),
        )


@dataclass(frozen=True)
class DeviceDocument:
    """The live record of one place / IoT node.

    ``rate`` and ``occupancy_factor`` are explicitly absent (None) when the
    device has not reported them; absence is never encoded as 0. ``extra``
    carries open real-time fields such as parking_available or gas_price.
    """

    node_id: str
    service_name: str
    display_name: str
    address: str
    location: GeoPoint
    rate: float | None = None
    occupancy_factor: float | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)
    updated_at: float = 0.0

    def __post_init__(self) -> None:
        errs = _document_violations(
            rate=self.rate, occupancy_factor=self.occupancy_factor, service_name=self.service_name
        )
        if errs:
            raise ValidationError(errs)
        object.__setattr__(self, "extra", dict(self.extra))

    def with_updates(self, **changes: Any) -> "DeviceDocument":
        return replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "node_id": self.node_id,
            "service_name": self.service_name,
            "display_name": self.display_name,
            "address": self.address,
            "location": {"lat": self.location.lat, "lon": self.location.lon},
            "extra": dict(self.extra),
            "updated_at": self.updated_at,
        }
        if self.rate is not None:
            out["rate"] = self.rate
        if self.occupancy_factor is not None:
            out["occupancy_factor"] = self.occupancy_factor
        return out

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "DeviceDocument":
        loc = obj["location"]
        return DeviceDocument(
            node_id=str(obj["node_id"]),
            service_name=str(obj["service_name"]),
            display_name=str(obj["display_name"]),
            address=str(obj["address"]),
            location=GeoPoint(float(loc["lat"]), float(loc["lon"])),
            rate=obj.get("rate"),
            occupancy_factor=obj.get("occupancy_factor"),
            extra=dict(obj.get("extra", {})),
            updated_at=float(obj.get("updated_at", 0.0)),
        )

    def to_result_json(self, travel_time_s: float | None = None) -> dict[str, Any]:
        """Human-facing result encoding ("Service Type", "Rate", ...)."""
        out: dict[str, Any] = {
            "Service Type": self.service_name.capitalize(),
            "Service Name": self.display_name,
            "Service Address": self.address,
            "Rate": self.rate,
            "Occupancy Factor": self.occupancy_factor,
        }
        if travel_time_s is not None:
            out["Travel Time"] = format_travel_time(travel_time_s)
        out.update(self.extra)
        return out


def format_travel_time(seconds: float) -> str:
    """Render a duration the way results display it: whole minutes."""
    return f"{max(0, round(seconds / 60.0))} min"


def _document_violations(
    *, rate: Any, occupancy_factor: Any, service_name: str
) -> list[str]:
    errs: list[str] = []
    if rate is not None:
        if not isinstance(rate, (int, float)) or not math.isfinite(rate) or not 0.0 <= rate <= 5.0:
            errs.append(f"rate {rate!r} outside [0, 5]")
    if occupancy_factor is not None:
        if (
            not isinstance(occupancy_factor, (int, float))
            or not math.isfinite(occupancy_factor)
            or not 0.0 <= occupancy_factor <= 1.0
        ):
            errs.append(f"occupancy_factor {occupancy_factor!r} outside [0, 1]")
    if not service_name:
        errs.append("service_name is empty")
    return errs


def validate_document(
    raw: Mapping[str, Any], known_services: Iterable[str] | None = None
) -> DeviceDocument:
    """Build a DeviceDocument from a raw field map, or raise ValidationError
    carrying every violated invariant."""
    errs: list[str] = []
    service_name = canonical_service_name(str(raw.get("service_name", "")))
    if not service_name:
        errs.append("service_name missing or empty")
    elif known_services is not None and service_name not in set(known_services):
        errs.append(f"unknown service_name {service_name!r}")

    location: GeoPoint | None = None
    loc_raw = raw.get("location")
    if isinstance(loc_raw, GeoPoint):
        location = loc_raw
    elif isinstance(loc_raw, Mapping) and "lat" in loc_raw and "lon" in loc_raw:
        try:
            location = GeoPoint(float(loc_raw["lat"]), float(loc_raw["lon"]))
        except (TypeError, ValueError) as e:
            errs.append(f"malformed location: {e}")
    else:
        errs.append(f"malformed location: {loc_raw!r}")

    rate = raw.get("rate")
    occupancy = raw.get("occupancy_factor")
    errs.extend(_document_violations(rate=rate, occupancy_factor=occupancy, service_name=service_name or "?"))

    node_id = str(raw.get("node_id", "")).strip()
    if not node_id:
        errs.append("node_id missing or empty")
    if errs:
        raise ValidationError(errs)

    assert location is not None
    return DeviceDocument(
        node_id=node_id,
        service_name=service_name,
        display_name=str(raw.get("display_name", node_id)),
        address=str(raw.get("address", "")),
        location=location,
        rate=None if rate is None else float(rate),
        occupancy_factor=None if occupancy is None else float(occupancy),
        extra=dict(raw.get("extra", {})),
        updated_at=float(raw.get("updated_at", 0.0)),
    )


def document_line(doc: DeviceDocument) -> str:
    """Deterministic single-line JSON for NDJSON storage."""
    return json.dumps(doc.to_json(), sort_keys=True, separators=(",", ":"))
