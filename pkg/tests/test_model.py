from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotseek.geo import GeoPoint
from iotseek.model import (
    DeviceDocument,
    DeviceMessage,
    Topic,
    ValidationError,
    canonical_service_name,
    format_travel_time,
    validate_document,
)


def make_doc(**over) -> DeviceDocument:
    base = dict(
        node_id="n1",
        service_name="dog park",
        display_name="Riverside Run",
        address="1 Main St",
        location=GeoPoint(43.7, -79.4),
        rate=4.2,
        occupancy_factor=0.3,
        extra={"parking_available": True},
        updated_at=100.0,
    )
    base.update(over)
    return DeviceDocument(**base)


def test_canonical_service_name():
    assert canonical_service_name("  Dog   Park ") == "dog park"
    assert canonical_service_name("GAS station") == "gas station"


def test_document_bounds_enforced():
    with pytest.raises(ValidationError):
        make_doc(rate=5.1)
    with pytest.raises(ValidationError):
        make_doc(rate=-0.1)
    with pytest.raises(ValidationError):
        make_doc(occupancy_factor=1.0001)
    with pytest.raises(ValidationError):
        make_doc(service_name="")
    # absence is legal and distinct from zero
    doc = make_doc(rate=None, occupancy_factor=None)
    assert doc.rate is None and doc.occupancy_factor is None


def test_document_is_immutable():
    doc = make_doc()
    with pytest.raises(AttributeError):
        doc.rate = 1.0  # type: ignore[misc]


def test_json_round_trip_preserves_absence():
    doc = make_doc(rate=None)
    encoded = doc.to_json()
    assert "rate" not in encoded  # absent, not null
    assert "occupancy_factor" in encoded
    back = DeviceDocument.from_json(json.loads(json.dumps(encoded)))
    assert back == doc


def test_result_json_field_names():
    doc = make_doc()
    out = doc.to_result_json(travel_time_s=420.0)
    assert out["Service Type"] == "Dog park"
    assert out["Service Name"] == "Riverside Run"
    assert out["Service Address"] == "1 Main St"
    assert out["Rate"] == 4.2
    assert out["Occupancy Factor"] == 0.3
    assert out["Travel Time"] == "7 min"
    assert out["parking_available"] is True  # extras merge at top level


def test_result_json_without_travel_time():
    out = make_doc().to_result_json()
    assert "Travel Time" not in out


@pytest.mark.parametrize(
    "seconds,expected",
    [(0.0, "0 min"), (29.0, "0 min"), (30.0, "0 min"), (31.0, "1 min"),
     (420.0, "7 min"), (540.0, "9 min"), (600.0, "10 min"), (3600.0, "60 min")],
)
def test_format_travel_time(seconds, expected):
    assert format_travel_time(seconds) == expected


def test_topic_decoding():
    assert Topic("input") is Topic.INPUT
    with pytest.raises(ValueError):
        Topic("telemetry")


def test_input_message_rejects_non_updatable_fields():
    with pytest.raises(ValueError):
        DeviceMessage(node_id="n1", topic=Topic.INPUT, payload={"node_id": "n1", "version": 3}, sent_at=1.0)
    # non-input topics carry arbitrary payloads
    DeviceMessage(node_id="n1", topic=Topic.COMMAND, payload={"reboot": True}, sent_at=1.0)


def test_message_json_round_trip():
    msg = DeviceMessage(node_id="n1", topic=Topic.INPUT, payload={"rate": 4.0}, sent_at=5.0)
    assert DeviceMessage.from_json(msg.to_json()) == msg


def test_validate_document_collects_all_violations():
    with pytest.raises(ValidationError) as exc:
        validate_document({"service_name": "", "rate": 9.0, "location": None})
    text = str(exc.value)
    assert "service_name" in text
    assert "rate" in text
    assert "location" in text
    assert len(exc.value.violations) >= 3


def test_validate_document_unknown_service():
    raw = dict(node_id="n1", service_name="dog park", display_name="d",
               address="a", location={"lat": 43.7, "lon": -79.4})
    validate_document(raw, known_services=["dog park"])
    with pytest.raises(ValidationError):
        validate_document(raw, known_services=["car wash"])


@given(st.floats(min_value=0.0, max_value=5.0, allow_nan=False),
       st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_in_range_values_always_accepted(rate, occ):
    doc = make_doc(rate=rate, occupancy_factor=occ)
    assert doc.rate == rate and doc.occupancy_factor == occ
