"""Query-time retrieval: route a query to services, fetch nearby documents,
attach travel times.

Routing embeds the query and ranks service descriptions in the vector
index. Document retrieval then takes the top-ranked service's nearest
devices; if that service has no documents near the origin the next ranked
service is tried (rank-1-with-fallthrough). Travel times come from the
routing provider; when it fails the documents still return, just without
travel times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import ServiceCatalog
from .embedding import EmbeddingPipeline
from .geo import GeoPoint
from .hnsw import HnswIndex, IndexParams, build_index
from .model import DeviceDocument
from .providers import (
    PlaceDocument,
    ProviderError,
    RoutingProvider,
    WebSnippet,
)
from .store import DocumentStore, GeoQuery


@dataclass(frozen=True)
class Preferences:
    """What the query asks to optimize; shared by retrieval, generation, review."""

    hard: Mapping[str, Any] = field(default_factory=dict)  # live-field equality musts
    order: str = "default"  # default | occupancy | travel | rate | price | lineup

    def filters(self) -> list:
        return [
            (lambda d, k=k, v=v: d.extra.get(k) == v) for k, v in self.hard.items()
        ]

    def sort_key(self, doc: "EnrichedDocument"):
        """Lexicographic ranking: constraint misses, the asked-for metric,
        then ascending occupancy, ascending travel time, descending rate."""
        d = doc.document
        occ = d.occupancy_factor if d.occupancy_factor is not None else 0.0
        travel = doc.travel_time_s if doc.travel_time_s is not None else float("inf")
        rate = d.rate if d.rate is not None else -1.0
        hard_miss = sum(1 for k, v in self.hard.items() if d.extra.get(k) != v)
        head: tuple = ()
        if self.order == "travel":
            head = (travel,)
        elif self.order == "rate":
            head = (-rate,)
        elif self.order == "price":
            prices = [v for k, v in d.extra.items() if k.endswith("_price") and isinstance(v, (int, float))]
            head = (min(prices) if prices else float("inf"),)
        elif self.order == "lineup":
            counts = [v for k, v in d.extra.items() if k.endswith("_count") and isinstance(v, (int, float))]
            head = (min(counts) if counts else float("inf"),)
        return (hard_miss, *head, occ, travel, -rate, d.node_id)


def extract_preferences(query: str) -> Preferences:
    q = " ".join(query.lower().split())
    hard: dict[str, Any] = {}
    if "parking available" in q or "with parking" in q or "free parking spot" in q:
        hard["parking_available"] = True
    order = "default"
    if any(t in q for t in ("least crowded", "uncrowded", "not crowded", "quietest", "least busy")):
        order = "occupancy"
    elif any(t in q for t in ("cheapest", "lowest price", "best price")):
        order = "price"
    elif any(t in q for t in ("shortest line", "shortest lineup", "short lineup", "smallest lineup", "least wait")):
        order = "lineup"
    elif any(t in q for t in ("best rated", "highest rated", "top rated", "best reviewed")):
        order = "rate"
    elif any(t in q for t in ("closest", "nearest", "quickest to reach", "shortest travel")):
        order = "travel"
    return Preferences(hard=hard, order=order)


@dataclass(frozen=True)
class SearchConfig:
    k_services: int = 3
    k_documents: int = 3
    context_policy: str = "rank1_only"

    def __post_init__(self) -> None:
        if self.k_services < 1 or self.k_documents < 1:
            raise ValueError("k_services and k_documents must be >= 1")
        if self.context_policy not in ("rank1_only", "mixed"):
            raise ValueError(f"unknown context_policy {self.context_policy!r}")


@dataclass(frozen=True)
class EnrichedDocument:
    document: DeviceDocument
    distance_m: float
    travel_time_s: float | None = None

    def to_result_json(self) -> dict[str, Any]:
        return self.document.to_result_json(travel_time_s=self.travel_time_s)


@dataclass
class RetrievedContext:
    """Everything the answer generator sees for one retrieval pass."""

    route: str
    query: str
    services: list[tuple[str, float]] = field(default_factory=list)
    context_service: str | None = None
    documents: list[EnrichedDocument] = field(default_factory=list)
    places: list[PlaceDocument] = field(default_factory=list)
    snippets: list[WebSnippet] = field(default_factory=list)
    unrouted: bool = False  # routing provider failed; travel times missing
    provider_error: str | None = None

    def is_empty(self) -> bool:
        return not (self.documents or self.places or self.snippets)

    def to_json(self) -> dict[str, Any]:
        return {
            "route": self.route,
            "query": self.query,
            "services": [[s, round(sim, 6)] for s, sim in self.services],
            "context_service": self.context_service,
            "documents": [d.to_result_json() for d in self.documents],
            "places": [p.to_json() for p in self.places],
            "snippets": [s.to_json() for s in self.snippets],
            "unrouted": self.unrouted,
            "provider_error": self.provider_error,
        }


def build_catalog_index(
    catalog: ServiceCatalog,
    pipeline: EmbeddingPipeline,
    params: IndexParams | None = None,
) -> HnswIndex:
    """Embed every service description and index it under the service name."""
    vectors = pipeline.embed_many([s.description for s in catalog.services])
    return build_index(list(zip(catalog.names(), vectors)), params or IndexParams())


class IotSearch:
    """Semantic routing plus live-document retrieval for one deployment."""

    def __init__(
        self,
        catalog: ServiceCatalog,
        store: DocumentStore,
        pipeline: EmbeddingPipeline,
        index: HnswIndex,
        routing: RoutingProvider,
        config: SearchConfig | None = None,
    ):
        self.catalog = catalog
        self.store = store
        self.pipeline = pipeline
        self.index = index
        self.routing = routing
        self.config = config or SearchConfig()

    def route(self, query: str, k: int | None = None) -> list[tuple[str, float]]:
        """Rank services for a query: (name, cosine similarity), best first."""
        k = k or self.config.k_services
        return self.index.search(self.pipeline.embed_text(query), k=k)

    def nearest_documents(
        self,
        service_name: str,
        origin: GeoPoint,
        k: int | None = None,
        filters: Sequence = (),
    ) -> list[EnrichedDocument]:
        hits = self.store.nearest(
            GeoQuery(
                origin=origin,
                service_names=(service_name,),
                limit=k or self.config.k_documents,
                filters=tuple(filters),
            )
        )
        return [EnrichedDocument(h.document, h.distance_m) for h in hits]

    def enrich_travel(
        self, origin: GeoPoint, docs: Sequence[EnrichedDocument]
    ) -> tuple[list[EnrichedDocument], bool]:
        """Attach travel seconds; on provider failure return docs unchanged."""
        if not docs:
            return list(docs), False
        try:
            secs = self.routing.travel_seconds(origin, [d.document.location for d in docs])
        except ProviderError:
            return list(docs), True
        return (
            [
                EnrichedDocument(d.document, d.distance_m, float(s))
                for d, s in zip(docs, secs)
            ],
            False,
        )

    def search(self, query: str, origin: GeoPoint) -> RetrievedContext:
        """Full pass: route, pick context service (with fallthrough), enrich.

        Live-field constraints in the query ("with parking available") are
        pushed down as document filters; when nothing satisfies them the
        unfiltered nearest documents come back so the caller can see why.
        """
        ranked = self.route(query)
        ctx = RetrievedContext(route="iot_rag_se", query=query, services=list(ranked))
        filters = extract_preferences(query).filters()

        # Constraint-satisfying documents take precedence across the whole
        # ranking; only when no service satisfies do we settle for unfiltered.
        passes: list[Sequence] = [filters, ()] if filters else [()]
        chosen: list[EnrichedDocument] = []
        if self.config.context_policy == "mixed":
            for f in passes:
                for name, _sim in ranked:
                    chosen.extend(self.nearest_documents(name, origin, filters=f))
                if chosen:
                    chosen.sort(key=lambda d: (d.distance_m, d.document.node_id))
                    chosen = chosen[: self.config.k_documents]
                    ctx.context_service = ranked[0][0]
                    break
        else:
            for f in passes:  # rank1_only: first service with any documents
                for name, _sim in ranked:
                    docs = self.nearest_documents(name, origin, filters=f)
                    if docs:
                        ctx.context_service = name
                        chosen = docs
                        break
                if chosen:
                    break
        docs, degraded = self.enrich_travel(origin, chosen)
        ctx.documents = docs
        ctx.unrouted = degraded
        return ctx


def context_lines(ctx: RetrievedContext) -> list[str]:
    """Render the context as one deterministic text line per item."""
    import json

    lines: list[str] = []
    for i, doc in enumerate(ctx.documents, start=1):
        lines.append(f"[doc {i}] " + json.dumps(doc.to_result_json(), sort_keys=True))
    for i, place in enumerate(ctx.places, start=1):
        lines.append(f"[place {i}] " + json.dumps(place.to_json(), sort_keys=True))
    for i, snip in enumerate(ctx.snippets, start=1):
        lines.append(f"[web {i}] " + json.dumps(snip.to_json(), sort_keys=True))
    return lines
