"""Recommendations that move when the world does.

Three deployments — parking garages, gas stations, walk-in clinics — each
answer a query, then a single device message flips the deciding field and
the same query answers differently. No rebuild, no cache to invalidate: the
store is the live state.
"""

from __future__ import annotations

from iotseek.agents import GAZETTEER, AgentEngine
from iotseek.dataset import TORONTO_REGION, default_catalog
from iotseek.embedding import EmbeddingPipeline, create_provider
from iotseek.geo import GeoPoint
from iotseek.ingest import apply_message
from iotseek.model import DeviceDocument, DeviceMessage, Topic
from iotseek.providers import SyntheticMaps, SyntheticRouting, SyntheticWeb
from iotseek.retrieval import IotSearch, SearchConfig, build_catalog_index
from iotseek.store import DocumentStore

ORIGIN = GeoPoint(43.6817, -79.3916)

SITES = [
    ("g1", "parking garage", "Bay St Garage", 43.6820, -79.3920, 4.1, 0.6, {"parking_available": False}),
    ("g2", "parking garage", "Yonge Deck", 43.6860, -79.3950, 4.3, 0.5, {"parking_available": True}),
    ("g3", "parking garage", "Harbour Garage", 43.6900, -79.3990, 4.0, 0.7, {"parking_available": True}),
    ("s1", "gas station", "Petro North", 43.6830, -79.3930, 4.2, 0.4, {"gas_price": 1.62}),
    ("s2", "gas station", "Shell Mid", 43.6850, -79.3960, 4.0, 0.5, {"gas_price": 1.48}),
    ("s3", "gas station", "Esso South", 43.6880, -79.3990, 4.5, 0.6, {"gas_price": 1.55}),
    ("c1", "walk-in clinic", "Rosedale Clinic", 43.6825, -79.3925, 4.6, 0.5, {"lineup_count": 9}),
    ("c2", "walk-in clinic", "Summerhill Care", 43.6855, -79.3955, 4.4, 0.6, {"lineup_count": 2}),
    ("c3", "walk-in clinic", "Midtown Walk-In", 43.6885, -79.3985, 4.2, 0.4, {"lineup_count": 5}),
]

SCENARIOS = [
    ("parking garage with parking available", "g2", {"parking_available": False},
     "the recommended deck just filled up"),
    ("cheapest gas station", "s2", {"gas_price": 1.80},
     "the cheapest station raises its price"),
    ("shortest lineup at a walk-in clinic", "c2", {"lineup_count": 30},
     "a bus of patients arrives at the quiet clinic"),
]


def main() -> None:
    catalog = default_catalog()
    store = DocumentStore(catalog.names())
    for nid, svc, name, lat, lon, rate, occ, extra in SITES:
        store.upsert(DeviceDocument(
            node_id=nid, service_name=svc, display_name=name, address="Toronto, ON",
            location=GeoPoint(lat, lon), updated_at=0.0, rate=rate,
            occupancy_factor=occ, extra=extra,
        ))

    pipeline = EmbeddingPipeline(create_provider("hashed-ngram"))
    index = build_catalog_index(catalog, pipeline)
    search = IotSearch(catalog, store, pipeline, index, SyntheticRouting(), SearchConfig())
    engine = AgentEngine(search, SyntheticMaps(GAZETTEER), SyntheticWeb(), [TORONTO_REGION])

    def recommend(query: str) -> str:
        result = engine.run_query(query, ORIGIN)
        top = result.answer.results[0]
        return f"{top['Service Name']}  (occupancy {top['Occupancy Factor']}, {top['Travel Time']})"

    for query, node_id, flip, story in SCENARIOS:
        print(f"> {query}")
        print(f"    now:   {recommend(query)}")
        apply_message(store, DeviceMessage(node_id, Topic.INPUT, {"extra": flip}, sent_at=10.0))
        print(f"    ({story}: {node_id} reports {flip})")
        print(f"    after: {recommend(query)}")
        print()


if __name__ == "__main__":
    main()
