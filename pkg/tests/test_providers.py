from __future__ import annotations

import json

import httpx
import pytest

from iotseek.geo import GeoPoint, haversine_m
from iotseek.providers import (
    MAPS_RESULT_CAP,
    FixtureMissError,
    FixtureStore,
    MatrixRouting,
    PlaceDocument,
    ProviderError,
    ProviderErrorKind,
    RecordingMaps,
    RecordingRouting,
    RecordingWeb,
    ReplayMaps,
    ReplayRouting,
    ReplayWeb,
    SyntheticMaps,
    SyntheticRouting,
    SyntheticWeb,
    WebSnippet,
    _classify_http_error,
    _request_with_retries,
    create_providers,
    maps_request,
    truncate_utf8,
)

from conftest import FIXTURES_DIR, WALKTHROUGH_ORIGIN, WALKTHROUGH_PARKS

CAIRO = GeoPoint(30.0444, 31.2357)


# -- value objects ---------------------------------------------------------------


def test_place_document_validation_and_round_trip():
    place = PlaceDocument(
        name="Corner Cafe",
        address="1 Side St",
        location=GeoPoint(43.1, -79.1),
        rate=4.5,
        source_attribution="test",
    )
    assert PlaceDocument.from_json(place.to_json()) == place
    with pytest.raises(ValueError):
        PlaceDocument("x", "y", GeoPoint(0, 0), rate=5.5)
    unrated = PlaceDocument("x", "y", GeoPoint(0, 0))
    assert "rate" not in unrated.to_json()  # absent, not null


def test_web_snippet_requires_content():
    with pytest.raises(ValueError):
        WebSnippet(title="t", url="u", content="")
    snip = WebSnippet(title="t", url="u", content="body", fetched_at=12.0)
    assert WebSnippet.from_json(snip.to_json()) == snip


def test_truncate_utf8_never_splits_a_code_point():
    text = "café" * 1000  # 5 bytes per repeat
    for max_bytes in range(1, 64):
        cut = truncate_utf8(text, max_bytes)
        raw = cut.encode("utf-8")
        assert len(raw) <= max_bytes
        raw.decode("utf-8")  # strict decode must succeed
    # oracle: decoding the truncated byte prefix leniently gives the same text
    for max_bytes in (7, 10, 2000):
        assert truncate_utf8(text, max_bytes) == text.encode()[:max_bytes].decode(
            "utf-8", errors="ignore"
        )


def test_truncate_utf8_short_text_untouched():
    assert truncate_utf8("short", 2000) == "short"


# -- fixture store ------------------------------------------------------------------


def test_fixture_key_is_canonical(tmp_path):
    store = FixtureStore(tmp_path, "routing")
    a = {"b": 1, "a": [1, 2]}
    b = {"a": [1, 2], "b": 1}  # same content, different key order
    assert store.key(a) == store.key(b)
    assert len(store.key(a)) == 24


def test_fixture_save_load_round_trip(tmp_path):
    store = FixtureStore(tmp_path, "maps")
    request = {"query": "cafe", "limit": 3}
    store.save(request, {"places": []})
    assert store.load(request) == {"places": []}
    # the stored file keeps the request for human inspection
    stored = json.loads(store.path_for(request).read_text())
    assert stored["request"] == request


def test_fixture_miss_is_its_own_error(tmp_path):
    store = FixtureStore(tmp_path, "web")
    with pytest.raises(FixtureMissError):
        store.load({"query": "never recorded", "limit": 5})


def test_fixture_request_mismatch_detected(tmp_path):
    store = FixtureStore(tmp_path, "web")
    request = {"query": "x", "limit": 5}
    path = store.save(request, {"snippets": []})
    tampered = json.loads(path.read_text())
    tampered["request"]["limit"] = 99  # file content no longer matches its name
    path.write_text(json.dumps(tampered))
    with pytest.raises(ProviderError) as exc:
        store.load(request)
    assert exc.value.kind is ProviderErrorKind.MALFORMED


def test_fixture_replays_stored_errors(tmp_path):
    store = FixtureStore(tmp_path, "routing")
    request = {"q": 1}
    store.save(request, error=ProviderError(ProviderErrorKind.QUOTA, "routing", "429"))
    with pytest.raises(ProviderError) as exc:
        store.load(request)
    assert exc.value.kind is ProviderErrorKind.QUOTA
    assert not isinstance(exc.value, FixtureMissError)


# -- retry policy ---------------------------------------------------------------------


def make_flaky(kind: ProviderErrorKind, fail_times: int):
    calls = {"n": 0}

    def send(timeout):
        calls["n"] += 1
        if calls["n"] <= fail_times:
            raise ProviderError(kind, "test", "scripted")
        return "ok"

    return send, calls


def test_retries_transient_failures():
    send, calls = make_flaky(ProviderErrorKind.TIMEOUT, fail_times=2)
    assert _request_with_retries("test", send, retries=2) == "ok"
    assert calls["n"] == 3


def test_gives_up_after_budget():
    send, calls = make_flaky(ProviderErrorKind.UNAVAILABLE, fail_times=99)
    with pytest.raises(ProviderError) as exc:
        _request_with_retries("test", send, retries=2)
    assert calls["n"] == 3
    assert exc.value.kind is ProviderErrorKind.UNAVAILABLE


@pytest.mark.parametrize("kind", [ProviderErrorKind.MALFORMED, ProviderErrorKind.QUOTA])
def test_malformed_and_quota_never_retry(kind):
    send, calls = make_flaky(kind, fail_times=99)
    with pytest.raises(ProviderError):
        _request_with_retries("test", send, retries=5)
    assert calls["n"] == 1


def test_classify_http_error_mapping():
    def status_error(code: int) -> httpx.HTTPStatusError:
        resp = httpx.Response(code, request=httpx.Request("GET", "http://x"))
        return httpx.HTTPStatusError("boom", request=resp.request, response=resp)

    assert _classify_http_error("p", httpx.ConnectTimeout("t")).kind is ProviderErrorKind.TIMEOUT
    assert _classify_http_error("p", status_error(429)).kind is ProviderErrorKind.QUOTA
    assert _classify_http_error("p", status_error(400)).kind is ProviderErrorKind.MALFORMED
    assert _classify_http_error("p", status_error(503)).kind is ProviderErrorKind.UNAVAILABLE
    assert _classify_http_error("p", KeyError("durations")).kind is ProviderErrorKind.MALFORMED
    assert _classify_http_error("p", ConnectionError("refused")).kind is ProviderErrorKind.UNAVAILABLE


# -- routing ------------------------------------------------------------------------


def test_synthetic_routing_identity_and_monotone():
    routing = SyntheticRouting()
    near = GeoPoint(43.69, -79.40)
    far = GeoPoint(44.0, -79.40)
    [zero, t_near, t_far] = routing.travel_seconds(
        WALKTHROUGH_ORIGIN, [WALKTHROUGH_ORIGIN, near, far]
    )
    assert zero == 0.0
    assert 0 < t_near < t_far
    # speed model: distance at 30 km/h
    expected = haversine_m(WALKTHROUGH_ORIGIN, near) / (30_000.0 / 3600.0)
    assert t_near == pytest.approx(expected)


def test_matrix_request_body_shape():
    body = MatrixRouting("http://r").request_body(
        GeoPoint(43.0, -79.0), [GeoPoint(43.1, -79.1), GeoPoint(43.2, -79.2)]
    )
    assert body["locations"] == [[-79.0, 43.0], [-79.1, 43.1], [-79.2, 43.2]]  # lon first
    assert body["sources"] == [0]
    assert body["destinations"] == [1, 2]
    assert body["metrics"] == ["duration"]


def test_routing_record_then_replay(tmp_path):
    recorder = RecordingRouting(SyntheticRouting(), tmp_path)
    dests = [GeoPoint(43.7, -79.4), GeoPoint(43.8, -79.3)]
    live = recorder.travel_seconds(WALKTHROUGH_ORIGIN, dests)
    replayed = ReplayRouting(tmp_path).travel_seconds(WALKTHROUGH_ORIGIN, dests)
    assert replayed == live


def test_replay_routing_empty_destinations_short_circuits(tmp_path):
    assert ReplayRouting(tmp_path).travel_seconds(WALKTHROUGH_ORIGIN, []) == []


def test_committed_walkthrough_routing_fixture():
    # destinations ordered as the geo store returns them (nearest first)
    replay = ReplayRouting(FIXTURES_DIR)
    by_id = {nid: loc for nid, _n, loc, _r, _o in WALKTHROUGH_PARKS}
    dests = [by_id["p2"], by_id["p1"], by_id["p3"]]
    assert replay.travel_seconds(WALKTHROUGH_ORIGIN, dests) == [540.0, 420.0, 600.0]


def test_committed_error_fixture_replays_timeout():
    replay = ReplayRouting(FIXTURES_DIR)
    with pytest.raises(ProviderError) as exc:
        replay.travel_seconds(GeoPoint(43.0, -79.0), [GeoPoint(43.1, -79.1)])
    assert exc.value.kind is ProviderErrorKind.TIMEOUT


# -- maps ----------------------------------------------------------------------------


def test_synthetic_maps_deterministic_and_anchored():
    maps = SyntheticMaps({"cairo": CAIRO})
    a = maps.text_search("chinese restaurant in cairo")
    b = maps.text_search("chinese restaurant in cairo")
    assert [p.to_json() for p in a] == [p.to_json() for p in b]
    assert all(abs(p.location.lat - CAIRO.lat) < 0.1 for p in a)
    assert all(p.source_attribution == "synthetic" for p in a)


def test_maps_result_cap_enforced():
    maps = SyntheticMaps()
    assert len(maps.text_search("cafe", limit=500)) <= MAPS_RESULT_CAP
    req = maps_request("cafe", None, 500)
    assert req == {"query": "cafe", "limit": 500}


def test_maps_request_rounds_coordinates():
    req = maps_request("cafe", GeoPoint(43.123456789, -79.987654321), 5)
    assert req["near"] == {"lat": 43.123457, "lon": -79.987654}


def test_maps_record_then_replay(tmp_path):
    recorder = RecordingMaps(SyntheticMaps(), tmp_path)
    live = recorder.text_search("taco stand", near=WALKTHROUGH_ORIGIN, limit=5)
    replay = ReplayMaps(tmp_path)
    replayed = replay.text_search("taco stand", near=WALKTHROUGH_ORIGIN, limit=5)
    assert [p.to_json() for p in replayed] == [p.to_json() for p in live]
    assert replay.last_fixture_miss is False


def test_maps_replay_miss_is_closed_world(tmp_path):
    replay = ReplayMaps(tmp_path)
    assert replay.text_search("unseen query", near=None, limit=5) == []
    assert replay.last_fixture_miss is True
    # a subsequent hit clears the flag
    RecordingMaps(SyntheticMaps(), tmp_path).text_search("seen", near=None, limit=5)
    replay.text_search("seen", near=None, limit=5)
    assert replay.last_fixture_miss is False


def test_committed_cairo_maps_fixture():
    replay = ReplayMaps(FIXTURES_DIR)
    places = replay.text_search("chinese restaurant in cairo", near=CAIRO, limit=20)
    assert [p.name for p in places] == [
        "Golden Dragon Cairo",
        "Peking Restaurant",
        "Maison Chine",
        "Nile Wok House",
    ]
    assert places[0].rate == 4.4
    assert all(p.source_attribution == "recorded" for p in places)


# -- web -----------------------------------------------------------------------------


def test_synthetic_web_deterministic_nonempty():
    web = SyntheticWeb()
    a = web.search("local news")
    assert a == web.search("local news")
    assert all(s.content for s in a)
    assert len(web.search("local news", limit=1)) == 1


def test_web_record_then_replay(tmp_path):
    recorder = RecordingWeb(SyntheticWeb(), tmp_path)
    live = recorder.search("city events", limit=5)
    replayed = ReplayWeb(tmp_path).search("city events", limit=5)
    assert replayed == live


def test_committed_oshawa_weather_fixture():
    replay = ReplayWeb(FIXTURES_DIR)
    snippets = replay.search("weather in Oshawa", limit=5)
    assert len(snippets) == 2
    assert "Oshawa" in snippets[0].content
    assert snippets[0].fetched_at == 1735693200.0


def test_committed_quota_error_fixture():
    replay = ReplayWeb(FIXTURES_DIR)
    with pytest.raises(ProviderError) as exc:
        replay.search("rate limited example", limit=5)
    assert exc.value.kind is ProviderErrorKind.QUOTA


# -- bundle factory --------------------------------------------------------------------


def test_create_providers_modes(tmp_path):
    mock = create_providers("mock")
    assert isinstance(mock.routing, SyntheticRouting)
    replay = create_providers("replay", fixtures_dir=tmp_path)
    assert isinstance(replay.maps, ReplayMaps)
    with pytest.raises(ValueError):
        create_providers("replay")  # fixtures_dir required
    with pytest.raises(ValueError):
        create_providers("live")  # routing_url required
    with pytest.raises(ValueError):
        create_providers("telepathy")
    live = create_providers("live", routing_url="http://r", web_url="http://w")
    assert isinstance(live.routing, MatrixRouting)
    record = create_providers(
        "record", routing_url="http://r", web_url="http://w", fixtures_dir=tmp_path
    )
    assert isinstance(record.routing, RecordingRouting)
