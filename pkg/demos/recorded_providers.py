"""Deterministic offline runs from recorded provider traffic.

The fixtures/ directory holds real request/response pairs captured once in
record mode — travel-time matrices, map place lookups, web snippets, and one
recorded timeout. Replay providers serve exactly those bytes, so these runs
are reproducible anywhere with no network and no keys.
"""

from __future__ import annotations

from pathlib import Path

from iotseek.agents import AgentEngine
from iotseek.dataset import TORONTO_REGION, default_catalog
from iotseek.embedding import EmbeddingPipeline, create_provider
from iotseek.geo import GeoPoint
from iotseek.model import DeviceDocument
from iotseek.providers import ReplayMaps, ReplayRouting, ReplayWeb
from iotseek.retrieval import IotSearch, SearchConfig, build_catalog_index
from iotseek.store import DocumentStore

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
ORIGIN = GeoPoint(43.6817, -79.3916)

PARKS = [
    ("p1", "Winston Park Dogs", GeoPoint(43.68454, -79.40500), 4.0, 0.50),
    ("p2", "Ramsden Run", GeoPoint(43.67561, -79.38941), 4.8, 0.4),
    ("p3", "Cedarvale Meadow", GeoPoint(43.69123, -79.42838), 4.6, 0.7),
]


def main() -> None:
    catalog = default_catalog()
    store = DocumentStore(catalog.names())
    for nid, name, loc, rate, occ in PARKS:
        store.upsert(DeviceDocument(
            node_id=nid, service_name="dog park", display_name=name,
            address="Toronto, ON", location=loc, updated_at=0.0,
            rate=rate, occupancy_factor=occ,
        ))

    pipeline = EmbeddingPipeline(create_provider("hashed-ngram"))
    index = build_catalog_index(catalog, pipeline)
    search = IotSearch(
        catalog, store, pipeline, index, ReplayRouting(FIXTURES), SearchConfig()
    )
    engine = AgentEngine(search, ReplayMaps(FIXTURES), ReplayWeb(FIXTURES), [TORONTO_REGION])

    print("> dog park   (travel times come from a recorded routing matrix)")
    result = engine.run_query("dog park", ORIGIN)
    for row in result.answer.results:
        print(f"    {row['Service Name']:20s} {row['Travel Time']:>7s}  occupancy {row['Occupancy Factor']}")

    print("\n> closest dog park   (recorded times drive the ordering)")
    result = engine.run_query("closest dog park", ORIGIN)
    print("    " + " -> ".join(r["Service Name"] for r in result.answer.results))

    print("\n> chinese restaurant in cairo   (recorded map places)")
    result = engine.run_query("chinese restaurant in cairo", ORIGIN)
    for row in result.answer.results:
        print(f"    {row['name']}  rated {row.get('rate')}")

    print("\n> weather in Oshawa   (recorded web snippets)")
    result = engine.run_query("weather in Oshawa", ORIGIN)
    print(f"    {result.answer.text}")

    print("\n> sushi in cairo   (never recorded: closed world, flagged not crashed)")
    result = engine.run_query("sushi in cairo", ORIGIN)
    print(f"    accepted={result.accepted} flags={result.flags()}")


if __name__ == "__main__":
    main()
