from __future__ import annotations

from pathlib import Path

import pytest

from iotseek.dataset import TORONTO_REGION, default_catalog
from iotseek.embedding import EmbeddingPipeline, create_provider
from iotseek.geo import GeoPoint
from iotseek.hnsw import IndexParams
from iotseek.model import DeviceDocument
from iotseek.retrieval import IotSearch, SearchConfig, build_catalog_index
from iotseek.store import DocumentStore

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"

# the three-park layout used by the walkthrough-style tests; the routing
# fixture under fixtures/routing is recorded for exactly these coordinates
WALKTHROUGH_ORIGIN = GeoPoint(43.6817, -79.3916)
WALKTHROUGH_PARKS = [
    ("p1", "Winston Park Dogs", GeoPoint(43.68454, -79.40500), 4.0, 0.50),
    ("p2", "Ramsden Run", GeoPoint(43.67561, -79.38941), 4.8, 0.4),
    ("p3", "Cedarvale Meadow", GeoPoint(43.69123, -79.42838), 4.6, 0.7),
]


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def pipeline():
    return EmbeddingPipeline(create_provider("hashed-ngram"))


@pytest.fixture(scope="session")
def catalog_index(catalog, pipeline):
    # one build for the whole run; the index itself is immutable
    return build_catalog_index(catalog, pipeline, IndexParams())


def make_park_store(catalog) -> DocumentStore:
    store = DocumentStore(catalog.names())
    for nid, name, loc, rate, occ in WALKTHROUGH_PARKS:
        store.upsert(
            DeviceDocument(
                node_id=nid,
                service_name="dog park",
                display_name=name,
                address="Toronto, ON",
                location=loc,
                updated_at=0.0,
                rate=rate,
                occupancy_factor=occ,
            )
        )
    return store


@pytest.fixture()
def park_store(catalog):
    return make_park_store(catalog)


def make_iot_search(catalog, store, pipeline, index, routing, **cfg) -> IotSearch:
    return IotSearch(catalog, store, pipeline, index, routing, SearchConfig(**cfg))


@pytest.fixture()
def toronto_region():
    return TORONTO_REGION
