"""External data providers: travel-time matrix, place text search, web search.

Every provider family has a live HTTP adapter, a deterministic synthetic
adapter (for offline use), and record/replay wrappers backed by
content-addressed fixture files. Failures surface as ``ProviderError`` with
one of four kinds — timeout, quota, malformed, unavailable — so callers can
branch on kind without parsing transport details.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx
import numpy as np

from .geo import GeoPoint, haversine_m

MAPS_RESULT_CAP = 20  # hard ceiling on text-search results per call
DEFAULT_DEADLINE_S = 2.0
DEFAULT_RETRIES = 2  # retries after the first attempt

_URBAN_DRIVING_MPS = 30_000.0 / 3600.0  # synthetic routing speed: 30 km/h


class ProviderErrorKind(enum.Enum):
    TIMEOUT = "timeout"
    QUOTA = "quota"
    MALFORMED = "malformed"
    UNAVAILABLE = "unavailable"


class ProviderError(Exception):
    def __init__(self, kind: ProviderErrorKind, provider: str, detail: str):
        super().__init__(f"{provider}: {kind.value}: {detail}")
        self.kind = kind
        self.provider = provider
        self.detail = detail


class FixtureMissError(ProviderError):
    """No recorded fixture for this request (as opposed to a stored error)."""


@dataclass(frozen=True)
class PlaceDocument:
    """One place returned by a maps text search."""

    name: str
    address: str
    location: GeoPoint
    rate: float | None = None
    source_attribution: str = ""

    def __post_init__(self) -> None:
        if self.rate is not None and not (0.0 <= self.rate <= 5.0):
            raise ValueError(f"rate {self.rate} outside [0, 5]")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "address": self.address,
            "location": {"lat": self.location.lat, "lon": self.location.lon},
            "source_attribution": self.source_attribution,
        }
        if self.rate is not None:
            out["rate"] = self.rate
        return out

    @staticmethod
    def from_json(obj: dict[str, Any]) -> "PlaceDocument":
        loc = obj["location"]
        return PlaceDocument(
            name=obj["name"],
            address=obj["address"],
            location=GeoPoint(float(loc["lat"]), float(loc["lon"])),
            rate=obj.get("rate"),
            source_attribution=obj.get("source_attribution", ""),
        )


@dataclass(frozen=True)
class WebSnippet:
    title: str
    url: str
    content: str  # text excerpt, never empty
    fetched_at: float = 0.0

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("snippet content must be nonempty")

    def to_json(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "url": self.url,
            "content": self.content,
            "fetched_at": self.fetched_at,
        }

    @staticmethod
    def from_json(obj: dict[str, Any]) -> "WebSnippet":
        return WebSnippet(
            obj["title"], obj["url"], obj["content"], obj.get("fetched_at", 0.0)
        )


def truncate_utf8(text: str, max_bytes: int = 2000) -> str:
    """Cut to at most max_bytes of UTF-8 without splitting a code point."""
    raw = text.encode("utf-8")
    if len(raw) <= max_bytes:
        return text
    return raw[:max_bytes].decode("utf-8", errors="ignore")


class RoutingProvider(Protocol):
    def travel_seconds(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> list[float]: ...


class MapsProvider(Protocol):
    def text_search(
        self, query: str, near: GeoPoint | None = None, limit: int = MAPS_RESULT_CAP
    ) -> list[PlaceDocument]: ...


class WebSearchProvider(Protocol):
    def search(self, query: str, limit: int = 5) -> list[WebSnippet]: ...


# -- fixtures ------------------------------------------------------------------


class FixtureStore:
    """Content-addressed request/response fixtures for one provider family.

    The file name is the hash of the canonical request JSON, so replay lookup
    is exact: same request, same file. Files keep the request alongside the
    response for human inspection and drift detection.
    """

    def __init__(self, root: str | Path, provider: str):
        self.dir = Path(root) / provider
        self.provider = provider

    @staticmethod
    def canonical(request: dict[str, Any]) -> str:
        return json.dumps(request, sort_keys=True, separators=(",", ":"))

    def key(self, request: dict[str, Any]) -> str:
        return hashlib.sha256(self.canonical(request).encode()).hexdigest()[:24]

    def path_for(self, request: dict[str, Any]) -> Path:
        return self.dir / f"{self.key(request)}.json"

    def load(self, request: dict[str, Any]) -> dict[str, Any]:
        path = self.path_for(request)
        if not path.exists():
            raise FixtureMissError(
                ProviderErrorKind.UNAVAILABLE,
                self.provider,
                f"no fixture {path.name} for request {self.canonical(request)}",
            )
        stored = json.loads(path.read_text())
        if stored.get("request") != request:
            raise ProviderError(
                ProviderErrorKind.MALFORMED,
                self.provider,
                f"fixture {path.name} request mismatch",
            )
        if "error" in stored:
            err = stored["error"]
            raise ProviderError(
                ProviderErrorKind(err["kind"]), self.provider, err.get("detail", "replayed error")
            )
        return stored["response"]

    def save(
        self,
        request: dict[str, Any],
        response: Any = None,
        error: ProviderError | None = None,
    ) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        record: dict[str, Any] = {"request": request}
        if error is not None:
            record["error"] = {"kind": error.kind.value, "detail": error.detail}
        else:
            record["response"] = response
        path = self.path_for(request)
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return path


def _classify_http_error(provider: str, exc: Exception) -> ProviderError:
    if isinstance(exc, httpx.TimeoutException):
        return ProviderError(ProviderErrorKind.TIMEOUT, provider, str(exc))
    if isinstance(exc, httpx.HTTPStatusError):
        code = exc.response.status_code
        if code == 429:
            return ProviderError(ProviderErrorKind.QUOTA, provider, f"HTTP {code}")
        if 400 <= code < 500:
            return ProviderError(ProviderErrorKind.MALFORMED, provider, f"HTTP {code}")
        return ProviderError(ProviderErrorKind.UNAVAILABLE, provider, f"HTTP {code}")
    if isinstance(exc, (json.JSONDecodeError, KeyError, TypeError, ValueError)):
        return ProviderError(ProviderErrorKind.MALFORMED, provider, str(exc))
    return ProviderError(ProviderErrorKind.UNAVAILABLE, provider, str(exc))


def _request_with_retries(
    provider: str,
    send,
    *,
    deadline_s: float = DEFAULT_DEADLINE_S,
    retries: int = DEFAULT_RETRIES,
):
    """Run ``send(timeout)`` up to 1+retries times; malformed/quota never retry."""
    last: ProviderError | None = None
    for _attempt in range(1 + retries):
        try:
            return send(deadline_s)
        except Exception as exc:  # noqa: BLE001 - classified below
            err = exc if isinstance(exc, ProviderError) else _classify_http_error(provider, exc)
            if err.kind in (ProviderErrorKind.MALFORMED, ProviderErrorKind.QUOTA):
                raise err from None
            last = err
    assert last is not None
    raise last


# -- routing -------------------------------------------------------------------


class SyntheticRouting:
    """Great-circle distance at urban driving speed; fully offline."""

    def travel_seconds(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> list[float]:
        return [haversine_m(origin, d) / _URBAN_DRIVING_MPS for d in destinations]


class MatrixRouting:
    """Travel-time matrix over an openrouteservice-compatible endpoint."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        profile: str = "driving-car",
        deadline_s: float = DEFAULT_DEADLINE_S,
        retries: int = DEFAULT_RETRIES,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.profile = profile
        self.deadline_s = deadline_s
        self.retries = retries

    def request_body(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> dict[str, Any]:
        locations = [[origin.lon, origin.lat]] + [[d.lon, d.lat] for d in destinations]
        return {
            "locations": locations,
            "sources": [0],
            "destinations": list(range(1, len(locations))),
            "metrics": ["duration"],
        }

    def travel_seconds(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> list[float]:
        if not destinations:
            return []
        body = self.request_body(origin, destinations)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = self.api_key

        def send(timeout: float):
            resp = httpx.post(
                f"{self.base_url}/v2/matrix/{self.profile}",
                json=body,
                headers=headers,
                timeout=timeout,
            )
            resp.raise_for_status()
            durations = resp.json()["durations"][0]
            if len(durations) != len(destinations) or any(d is None for d in durations):
                raise ProviderError(
                    ProviderErrorKind.MALFORMED, "routing", "durations row incomplete"
                )
            return [float(d) for d in durations]

        return _request_with_retries(
            "routing", send, deadline_s=self.deadline_s, retries=self.retries
        )


class ReplayRouting:
    def __init__(self, fixtures: str | Path):
        self.fixtures = FixtureStore(fixtures, "routing")
        self._shape = MatrixRouting(base_url="http://replayed")

    def travel_seconds(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> list[float]:
        if not destinations:
            return []
        request = self._shape.request_body(origin, destinations)
        response = self.fixtures.load(request)
        return [float(d) for d in response["durations"][0]]


class RecordingRouting:
    def __init__(self, inner: RoutingProvider, fixtures: str | Path):
        self.inner = inner
        self.fixtures = FixtureStore(fixtures, "routing")
        self._shape = MatrixRouting(base_url="http://recorded")

    def travel_seconds(
        self, origin: GeoPoint, destinations: Sequence[GeoPoint]
    ) -> list[float]:
        request = self._shape.request_body(origin, destinations)
        try:
            durations = self.inner.travel_seconds(origin, destinations)
        except ProviderError as err:
            self.fixtures.save(request, error=err)
            raise
        self.fixtures.save(request, {"durations": [durations]})
        return durations


# -- maps text search ----------------------------------------------------------


class NominatimMaps:
    """Place text search against a Nominatim-compatible endpoint."""

    def __init__(
        self,
        base_url: str = "https://nominatim.openstreetmap.org",
        deadline_s: float = DEFAULT_DEADLINE_S,
        retries: int = DEFAULT_RETRIES,
        user_agent: str = "iotseek/0.1",
    ):
        self.base_url = base_url.rstrip("/")
        self.deadline_s = deadline_s
        self.retries = retries
        self.user_agent = user_agent

    def text_search(
        self, query: str, near: GeoPoint | None = None, limit: int = MAPS_RESULT_CAP
    ) -> list[PlaceDocument]:
        limit = min(limit, MAPS_RESULT_CAP)
        params: dict[str, Any] = {"q": query, "format": "jsonv2", "limit": limit}

        def send(timeout: float):
            resp = httpx.get(
                f"{self.base_url}/search",
                params=params,
                headers={"User-Agent": self.user_agent},
                timeout=timeout,
            )
            resp.raise_for_status()
            places = []
            for row in resp.json():
                places.append(
                    PlaceDocument(
                        name=row.get("name") or row["display_name"].split(",")[0],
                        address=row["display_name"],
                        location=GeoPoint(float(row["lat"]), float(row["lon"])),
                        source_attribution="OpenStreetMap contributors",
                    )
                )
            return places[:limit]

        return _request_with_retries(
            "maps", send, deadline_s=self.deadline_s, retries=self.retries
        )


class SyntheticMaps:
    """Deterministic offline stand-in: places derived from the query text."""

    def __init__(self, gazetteer: dict[str, GeoPoint] | None = None):
        self.gazetteer = gazetteer or {}

    def _anchor(self, query: str, near: GeoPoint | None) -> GeoPoint:
        q = query.lower()
        for city, point in self.gazetteer.items():
            if city in q:
                return point
        return near if near is not None else GeoPoint(0.0, 0.0)

    def text_search(
        self, query: str, near: GeoPoint | None = None, limit: int = MAPS_RESULT_CAP
    ) -> list[PlaceDocument]:
        limit = min(limit, MAPS_RESULT_CAP)
        anchor = self._anchor(query, near)
        seed = int.from_bytes(hashlib.blake2b(query.lower().encode(), digest_size=8).digest(), "big")
        rng = np.random.default_rng(seed)
        label = " ".join(w.capitalize() for w in query.split()[:4])
        out = []
        for i in range(min(limit, 5)):
            out.append(
                PlaceDocument(
                    name=f"{label} Spot {i + 1}",
                    address=f"{int(rng.integers(1, 300))} Synthetic Rd",
                    location=GeoPoint(
                        anchor.lat + float(rng.uniform(-0.02, 0.02)),
                        anchor.lon + float(rng.uniform(-0.02, 0.02)),
                    ),
                    rate=round(float(rng.uniform(3.0, 5.0)), 1),
                    source_attribution="synthetic",
                )
            )
        return out


class ReplayMaps:
    def __init__(self, fixtures: str | Path):
        self.fixtures = FixtureStore(fixtures, "maps")
        self.last_fixture_miss = False

    def text_search(
        self, query: str, near: GeoPoint | None = None, limit: int = MAPS_RESULT_CAP
    ) -> list[PlaceDocument]:
        limit = min(limit, MAPS_RESULT_CAP)
        request = maps_request(query, near, limit)
        self.last_fixture_miss = False
        try:
            response = self.fixtures.load(request)
        except FixtureMissError:
            # closed world: an unrecorded query has no places, not an outage
            self.last_fixture_miss = True
            return []
        return [PlaceDocument.from_json(p) for p in response["places"][:limit]]


class RecordingMaps:
    def __init__(self, inner: MapsProvider, fixtures: str | Path):
        self.inner = inner
        self.fixtures = FixtureStore(fixtures, "maps")

    def text_search(
        self, query: str, near: GeoPoint | None = None, limit: int = MAPS_RESULT_CAP
    ) -> list[PlaceDocument]:
        limit = min(limit, MAPS_RESULT_CAP)
        request = maps_request(query, near, limit)
        try:
            places = self.inner.text_search(query, near, limit)
        except ProviderError as err:
            self.fixtures.save(request, error=err)
            raise
        self.fixtures.save(request, {"places": [p.to_json() for p in places]})
        return places


def maps_request(query: str, near: GeoPoint | None, limit: int) -> dict[str, Any]:
    req: dict[str, Any] = {"query": query, "limit": limit}
    if near is not None:
        req["near"] = {"lat": round(near.lat, 6), "lon": round(near.lon, 6)}
    return req


# -- web search ----------------------------------------------------------------


class SearxWeb:
    """Web search against a SearxNG-compatible JSON endpoint."""

    def __init__(
        self,
        base_url: str,
        deadline_s: float = DEFAULT_DEADLINE_S,
        retries: int = DEFAULT_RETRIES,
    ):
        self.base_url = base_url.rstrip("/")
        self.deadline_s = deadline_s
        self.retries = retries

    def search(self, query: str, limit: int = 5) -> list[WebSnippet]:
        def send(timeout: float):
            resp = httpx.get(
                f"{self.base_url}/search",
                params={"q": query, "format": "json"},
                timeout=timeout,
            )
            resp.raise_for_status()
            now = time.time()
            rows = resp.json()["results"][:limit]
            return [
                WebSnippet(
                    title=r.get("title", ""),
                    url=r.get("url", ""),
                    content=truncate_utf8(r.get("content") or "(no excerpt)"),
                    fetched_at=now,
                )
                for r in rows
            ]

        return _request_with_retries(
            "web", send, deadline_s=self.deadline_s, retries=self.retries
        )


class SyntheticWeb:
    """Deterministic offline stand-in for web search."""

    def search(self, query: str, limit: int = 5) -> list[WebSnippet]:
        digest = hashlib.blake2b(query.lower().encode(), digest_size=4).hexdigest()
        out = []
        for i in range(min(limit, 3)):
            out.append(
                WebSnippet(
                    title=f"{query.strip().capitalize()} — result {i + 1}",
                    url=f"https://example.org/{digest}/{i + 1}",
                    content=truncate_utf8(
                        f"Reference material ({digest}) covering: {query.strip()}."
                    ),
                )
            )
        return out


class ReplayWeb:
    def __init__(self, fixtures: str | Path):
        self.fixtures = FixtureStore(fixtures, "web")

    def search(self, query: str, limit: int = 5) -> list[WebSnippet]:
        response = self.fixtures.load({"query": query, "limit": limit})
        return [WebSnippet.from_json(s) for s in response["snippets"][:limit]]


class RecordingWeb:
    def __init__(self, inner: WebSearchProvider, fixtures: str | Path):
        self.inner = inner
        self.fixtures = FixtureStore(fixtures, "web")

    def search(self, query: str, limit: int = 5) -> list[WebSnippet]:
        request = {"query": query, "limit": limit}
        try:
            snippets = self.inner.search(query, limit)
        except ProviderError as err:
            self.fixtures.save(request, error=err)
            raise
        self.fixtures.save(request, {"snippets": [s.to_json() for s in snippets]})
        return snippets


# -- bundles -------------------------------------------------------------------


@dataclass
class ProviderBundle:
    routing: RoutingProvider
    maps: MapsProvider
    web: WebSearchProvider


def create_providers(
    mode: str,
    *,
    fixtures_dir: str | Path | None = None,
    routing_url: str | None = None,
    routing_api_key: str | None = None,
    maps_url: str | None = None,
    web_url: str | None = None,
    gazetteer: dict[str, GeoPoint] | None = None,
) -> ProviderBundle:
    """Build the provider trio for one of the modes: mock, replay, live, record."""
    if mode == "mock":
        return ProviderBundle(SyntheticRouting(), SyntheticMaps(gazetteer), SyntheticWeb())
    if mode == "replay":
        if fixtures_dir is None:
            raise ValueError("replay mode needs fixtures_dir")
        return ProviderBundle(
            ReplayRouting(fixtures_dir), ReplayMaps(fixtures_dir), ReplayWeb(fixtures_dir)
        )
    if mode in ("live", "record"):
        if not routing_url:
            raise ValueError(f"{mode} mode needs routing_url")
        routing: RoutingProvider = MatrixRouting(routing_url, api_key=routing_api_key)
        maps: MapsProvider = NominatimMaps(maps_url) if maps_url else NominatimMaps()
        if not web_url:
            raise ValueError(f"{mode} mode needs web_url")
        web: WebSearchProvider = SearxWeb(web_url)
        if mode == "record":
            if fixtures_dir is None:
                raise ValueError("record mode needs fixtures_dir")
            return ProviderBundle(
                RecordingRouting(routing, fixtures_dir),
                RecordingMaps(maps, fixtures_dir),
                RecordingWeb(web, fixtures_dir),
            )
        return ProviderBundle(routing, maps, web)
    raise ValueError(f"unknown provider mode {mode!r}")
