"""End-to-end acceptance gate: one test per shipped guarantee.

Deliberately heavier than the unit suites — geo, ingestion, and dataset
checks here run at full size, and the torn-read soak holds the store under
concurrent load for a fixed wall-clock window.
"""

from __future__ import annotations

import itertools
import os
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from iotseek.agents import (
    GAZETTEER,
    AgentEngine,
    Classification,
    MockBackend,
    Review,
    Route,
    Verdict,
)
from iotseek.config import AppConfig
from iotseek.dataset import TORONTO_REGION, CatalogSpec, documents_from, generate
from iotseek.embedding import (
    EmbeddingCache,
    EmbeddingPipeline,
    create_provider,
    mean_pool,
    normalize,
)
from iotseek.evaluation import check_bookkeeping, load_intent_cases, run_intent_eval, run_latency_probe
from iotseek.geo import GeoPoint, haversine_m
from iotseek.hnsw import HnswIndex, IndexParams
from iotseek.ingest import ApplyOutcome, apply_message
from iotseek.model import DeviceDocument, DeviceMessage, Topic
from iotseek.providers import SyntheticMaps, SyntheticRouting, SyntheticWeb
from iotseek.retrieval import build_catalog_index
from iotseek.server import AppState, create_app
from iotseek.store import DocumentStore, GeoQuery

from conftest import WALKTHROUGH_ORIGIN, make_iot_search, make_park_store

ORIGIN_JSON = {"lat": WALKTHROUGH_ORIGIN.lat, "lon": WALKTHROUGH_ORIGIN.lon}


# -- geo retrieval against an exhaustive scan --------------------------------------


def _scan_nearest(store: DocumentStore, query: GeoQuery) -> list[tuple[str, float]]:
    rows: list[tuple[float, str]] = []
    for name in query.service_names:
        for doc in store.collection(name).documents.values():
            rows.append((haversine_m(query.origin, doc.location), doc.node_id))
    rows.sort()
    return [(nid, dist) for dist, nid in rows[: query.limit]]


def test_geo_nearest_matches_exhaustive_scan_at_scale(catalog):
    t0 = time.perf_counter()
    ds = generate(CatalogSpec(n_devices=10_000, seed=11), catalog)
    store = documents_from(ds.documents, catalog)
    assert store.document_count() == 10_000

    rng = np.random.default_rng(52)
    names = catalog.names()
    b = TORONTO_REGION.bounds
    for i in range(100):
        if i % 5 == 0:  # some origins far outside the data
            origin = GeoPoint(float(rng.uniform(-80, 80)), float(rng.uniform(-180, 180)))
        else:
            origin = GeoPoint(
                float(rng.uniform(b.min_lat, b.max_lat)),
                float(rng.uniform(b.min_lon, b.max_lon)),
            )
        picked = [names[j] for j in rng.choice(len(names), size=int(rng.integers(1, 4)), replace=False)]
        q = GeoQuery(picked, origin, limit=int(rng.integers(1, 26)))
        got = [(h.document.node_id, h.distance_m) for h in store.nearest(q)]
        assert got == _scan_nearest(store, q), f"query {i} diverged from full scan"
    assert time.perf_counter() - t0 < 10.0


# -- vector index recall -------------------------------------------------------------


def test_vector_index_recall_on_catalog_embeddings(catalog, pipeline):
    names = catalog.names()
    vectors = np.stack([pipeline.embed_text(catalog.get(n).description) for n in names])

    t0 = time.perf_counter()
    index = HnswIndex(vectors.shape[1], IndexParams(M=16, ef_search=64))
    for name, vec in zip(names, vectors):
        index.insert(name, vec)

    rng = np.random.default_rng(7)
    queries = rng.standard_normal((1_000, vectors.shape[1]))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    hits = [set(n for n, _ in index.search(v, 3)) for v in queries]
    elapsed = time.perf_counter() - t0

    order = np.argsort(-(queries @ vectors.T), axis=1)[:, :3]
    truth = [set(names[j] for j in row) for row in order]
    recall = float(np.mean([len(h & t) / 3 for h, t in zip(hits, truth)]))
    assert recall >= 0.99, f"recall@3 {recall:.4f}"
    assert elapsed < 5.0


# -- pooling / normalization numerics -------------------------------------------------


def _loop_mean_pool(vectors: np.ndarray, mask: np.ndarray) -> np.ndarray:
    rows, width, dim = vectors.shape
    out = np.zeros((rows, dim))
    for i in range(rows):
        total, count = np.zeros(dim), 0.0
        for t in range(width):
            if mask[i, t]:
                total += vectors[i, t]
                count += 1.0
        out[i] = total / count
    return out


def test_pooling_and_normalization_numerics():
    rng = np.random.default_rng(3)
    for _ in range(1_000):
        rows = int(rng.integers(1, 4))
        width = int(rng.integers(1, 7))
        dim = int(rng.integers(1, 9))
        vectors = rng.standard_normal((rows, width, dim))
        mask = rng.integers(0, 2, size=(rows, width))
        for i in range(rows):  # every sentence keeps at least one real token
            mask[i, int(rng.integers(width))] = 1
        diff = np.abs(mean_pool(vectors, mask) - _loop_mean_pool(vectors, mask))
        assert float(diff.max()) <= 1e-9

    for _ in range(1_000):
        v = rng.standard_normal(16)
        unit = normalize(v)
        assert float(np.abs(normalize(unit) - unit).max()) <= 1e-9
        for c in (1e-6, 1.0, 1e6):
            assert float(np.abs(normalize(c * v) - unit).max()) <= 1e-9


# -- review-loop termination -----------------------------------------------------------


class ScriptedReviewBackend(MockBackend):
    """Reviews come from a fixed script; everything else is the stock behavior."""

    def __init__(self, verdicts, route: Route = Route.IOT):
        self.script = list(verdicts)
        self._route = route

    def classify(self, query, origin, covered, memory):
        return Classification(route=self._route)

    def review(self, query, ctx, answer) -> Review:
        if self.script:
            return Review(self.script.pop(0), "scripted")
        return Review(Verdict.ACCEPTED, "script exhausted")


class RandomVerdictBackend(MockBackend):
    def __init__(self, rng: np.random.Generator, route: Route):
        self._rng = rng
        self._route = route

    def classify(self, query, origin, covered, memory):
        return Classification(route=self._route)

    def review(self, query, ctx, answer) -> Review:
        r = self._rng.random()
        if r < 0.15:
            v = Verdict.ACCEPTED
        elif r < 0.60:
            v = Verdict.REFORMULATE
        else:
            v = Verdict.REROUTE
        return Review(v, "random")


@pytest.fixture(scope="module")
def loop_search(catalog, catalog_index, tmp_path_factory):
    # cache query embeddings so thousands of loop runs stay cheap
    cache = EmbeddingCache(tmp_path_factory.mktemp("accept") / "emb.json")
    pipe = EmbeddingPipeline(create_provider("hashed-ngram"), cache=cache)
    return make_iot_search(catalog, make_park_store(catalog), pipe, catalog_index, SyntheticRouting())


def _loop_engine(loop_search, backend, hop_budget):
    return AgentEngine(
        loop_search,
        SyntheticMaps(GAZETTEER),
        SyntheticWeb(),
        [TORONTO_REGION],
        backend=backend,
        hop_budget=hop_budget,
    )


def test_review_loop_always_terminates(loop_search):
    verdicts = (Verdict.ACCEPTED, Verdict.REFORMULATE, Verdict.REROUTE)

    # exhaustive: every possible verdict sequence at the default budget
    for seq in itertools.product(verdicts, repeat=4):
        engine = _loop_engine(loop_search, ScriptedReviewBackend(list(seq)), hop_budget=3)
        result = engine.run_query("find a dog park", WALKTHROUGH_ORIGIN)
        assert result.cycles <= 4, seq
        rerouted = [s.detail["route"] for s in result.steps if s.event == "rerouted"]
        assert len(rerouted) == len(set(rerouted)), seq
        if seq[0] is Verdict.ACCEPTED:
            assert result.cycles == 1 and result.accepted and not result.low_confidence

    # randomized: provider misbehavior never produces an unbounded loop
    rng = np.random.default_rng(99)
    queries = ["find a dog park", "cheapest gas station", "quiet coffee shop", "weather today"]
    nonterminated = 0
    for _ in range(10_000):
        budget = int(rng.integers(0, 6))
        route = [Route.IOT, Route.MAPS, Route.WEB][int(rng.integers(0, 3))]
        engine = _loop_engine(loop_search, RandomVerdictBackend(rng, route), hop_budget=budget)
        result = engine.run_query(queries[int(rng.integers(0, len(queries)))], WALKTHROUGH_ORIGIN)
        if result is None or result.cycles > 1 + budget:
            nonterminated += 1
        rerouted = [s.detail["route"] for s in result.steps if s.event == "rerouted"]
        assert len(rerouted) == len(set(rerouted))
    assert nonterminated == 0


# -- live messages flip recommendations -------------------------------------------------


SCENARIO_ROWS = [
    ("g1", "parking garage", "Bay St Garage", GeoPoint(43.6820, -79.3920), 4.1, 0.6, {"parking_available": False}),
    ("g2", "parking garage", "Yonge Deck", GeoPoint(43.6860, -79.3950), 4.3, 0.5, {"parking_available": True}),
    ("g3", "parking garage", "Harbour Garage", GeoPoint(43.6900, -79.3990), 4.0, 0.7, {"parking_available": True}),
    ("s1", "gas station", "Petro North", GeoPoint(43.6830, -79.3930), 4.2, 0.4, {"gas_price": 1.62}),
    ("s2", "gas station", "Shell Mid", GeoPoint(43.6850, -79.3960), 4.0, 0.5, {"gas_price": 1.48}),
    ("s3", "gas station", "Esso South", GeoPoint(43.6880, -79.3990), 4.5, 0.6, {"gas_price": 1.55}),
    ("c1", "walk-in clinic", "Rosedale Clinic", GeoPoint(43.6825, -79.3925), 4.6, 0.5, {"lineup_count": 9}),
    ("c2", "walk-in clinic", "Summerhill Care", GeoPoint(43.6855, -79.3955), 4.4, 0.6, {"lineup_count": 2}),
    ("c3", "walk-in clinic", "Midtown Walk-In", GeoPoint(43.6885, -79.3985), 4.2, 0.4, {"lineup_count": 5}),
]


def test_live_messages_flip_recommendations(catalog, pipeline, catalog_index):
    store = DocumentStore(catalog.names())
    for nid, svc, name, loc, rate, occ, extra in SCENARIO_ROWS:
        store.upsert(
            DeviceDocument(
                node_id=nid, service_name=svc, display_name=name, address="Toronto, ON",
                location=loc, updated_at=0.0, rate=rate, occupancy_factor=occ, extra=extra,
            )
        )
    search = make_iot_search(catalog, store, pipeline, catalog_index, SyntheticRouting())
    engine = AgentEngine(search, SyntheticMaps(GAZETTEER), SyntheticWeb(), [TORONTO_REGION])

    def recommended(query: str) -> str:
        result = engine.run_query(query, WALKTHROUGH_ORIGIN)
        assert result.accepted and result.route == "iot_rag_se"
        return result.answer.results[0]["Service Name"]

    # nearest garage lacks parking, so the constraint picks the next one out
    assert recommended("parking garage with parking available") == "Yonge Deck"
    assert recommended("cheapest gas station") == "Shell Mid"
    assert recommended("shortest lineup at a walk-in clinic") == "Summerhill Care"

    flips = [
        ("g2", {"extra": {"parking_available": False}}),
        ("s2", {"extra": {"gas_price": 1.80}}),
        ("c2", {"extra": {"lineup_count": 30}}),
    ]
    for nid, payload in flips:
        outcome = apply_message(store, DeviceMessage(nid, Topic.INPUT, payload, sent_at=10.0))
        assert outcome.outcome is ApplyOutcome.APPLIED

    assert recommended("parking garage with parking available") == "Harbour Garage"
    assert recommended("cheapest gas station") == "Esso South"
    assert recommended("shortest lineup at a walk-in clinic") == "Midtown Walk-In"


# -- intent harness ---------------------------------------------------------------------


def test_intent_rank_ledger_consistent_offline(catalog_index, pipeline):
    cases = load_intent_cases()
    report = run_intent_eval(
        lambda q, k: catalog_index.search(pipeline.embed_text(q), k), cases, k=3
    )
    assert check_bookkeeping(report, cases) == []
    assert report.total == 25


@pytest.mark.skipif(
    not os.environ.get("IOTSEEK_EVAL_EMBEDDER"),
    reason="set IOTSEEK_EVAL_EMBEDDER (e.g. sbert:all-MiniLM-L6-v2) to run the live-embedding eval",
)
def test_intent_accuracy_with_sentence_embedder(catalog):
    pipe = EmbeddingPipeline(create_provider(os.environ["IOTSEEK_EVAL_EMBEDDER"]))
    index = build_catalog_index(catalog, pipe)
    cases = load_intent_cases()
    report = run_intent_eval(lambda q, k: index.search(pipe.embed_text(q), k), cases, k=3)
    assert report.topk_hits == report.total == 25, report.format_table()
    assert report.top1_hits >= 20, report.format_table()


# -- ingestion: convergence, idempotence, no torn reads -----------------------------------


def _seed_doc() -> DeviceDocument:
    return DeviceDocument(
        node_id="n1", service_name="dog park", display_name="Seed Run",
        address="1 Main St", location=GeoPoint(43.7, -79.4),
        rate=2.0, occupancy_factor=0.4, updated_at=0.0,
    )


def _rand_payload(rng: np.random.Generator, keys: tuple[str, ...]) -> dict:
    p: dict = {}
    if "occupancy_factor" in keys:
        p["occupancy_factor"] = round(float(rng.uniform(0, 1)), 4)
    if "rate" in keys:
        p["rate"] = round(float(rng.uniform(0, 5)), 2)
    if "extra" in keys:
        p["extra"] = {"lineup_count": int(rng.integers(0, 40))}
    return p


def test_ingest_convergence_idempotence_and_no_torn_reads():
    rng = np.random.default_rng(17)
    key_sets = [
        ("occupancy_factor",), ("rate",), ("extra",),
        ("occupancy_factor", "rate"), ("occupancy_factor", "rate", "extra"),
    ]
    for trial in range(10_000):
        keys = key_sets[int(rng.integers(0, len(key_sets)))]
        older = DeviceMessage("n1", Topic.INPUT, _rand_payload(rng, keys), sent_at=100.0)
        newer = DeviceMessage("n1", Topic.INPUT, _rand_payload(rng, keys), sent_at=200.0)

        stores = []
        for order in ((older, newer), (newer, older)):
            store = DocumentStore(["dog park"])
            store.upsert(_seed_doc())
            for msg in order:
                apply_message(store, msg)
            stores.append(store)
        in_order, reversed_order = stores
        assert in_order.get("dog park", "n1") == reversed_order.get("dog park", "n1"), trial

        final = in_order.get("dog park", "n1")
        if "occupancy_factor" in keys:
            assert final.occupancy_factor == newer.payload["occupancy_factor"]
        if "rate" in keys:
            assert final.rate == newer.payload["rate"]
        if "extra" in keys:
            assert final.extra["lineup_count"] == newer.payload["extra"]["lineup_count"]

        before = in_order.content_hash()
        apply_message(in_order, older)
        apply_message(in_order, newer)
        assert in_order.content_hash() == before, trial

    # soak: 8 writers + 8 readers; rate is pinned to occupancy * 5 in every
    # write, so any torn document shows up as a broken invariant
    services = ["dog park", "gas station"]
    store = DocumentStore(services)
    nodes = []
    for s, svc in enumerate(services):
        for i in range(16):
            nid = f"{svc[:3]}{i}"
            nodes.append((svc, nid))
            occ = 0.4
            store.upsert(
                DeviceDocument(
                    node_id=nid, service_name=svc, display_name=f"Site {nid}",
                    address="Toronto, ON",
                    location=GeoPoint(43.6 + i * 0.01, -79.5 + s * 0.05),
                    rate=occ * 5.0, occupancy_factor=occ, updated_at=0.0,
                )
            )

    clock = itertools.count(1)
    deadline = time.monotonic() + 10.0
    problems: list[str] = []
    lock = threading.Lock()

    def writer(wid: int) -> None:
        try:
            while time.monotonic() < deadline:
                k = next(clock)
                svc, nid = nodes[k % len(nodes)]
                occ = (k % 101) / 100.0
                msg = DeviceMessage(
                    nid, Topic.INPUT,
                    {"occupancy_factor": occ, "rate": occ * 5.0},
                    sent_at=float(k),
                )
                apply_message(store, msg)
        except Exception as exc:  # noqa: BLE001 - any writer crash fails the test
            with lock:
                problems.append(f"writer {wid}: {exc!r}")

    def reader(rid: int) -> None:
        try:
            origin = GeoPoint(43.65, -79.45)
            while time.monotonic() < deadline:
                for svc in services:
                    for hit in store.nearest(GeoQuery([svc], origin, limit=8)):
                        doc = hit.document
                        if doc.rate != doc.occupancy_factor * 5.0:
                            with lock:
                                problems.append(
                                    f"torn read on {doc.node_id}: rate={doc.rate} occ={doc.occupancy_factor}"
                                )
        except Exception as exc:  # noqa: BLE001
            with lock:
                problems.append(f"reader {rid}: {exc!r}")

    threads = [threading.Thread(target=writer, args=(i,)) for i in range(8)]
    threads += [threading.Thread(target=reader, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert problems == []


# -- full-scale dataset, health counts, query latency --------------------------------------


def test_full_scale_generation_health_and_latency(catalog, pipeline, catalog_index):
    t0 = time.perf_counter()
    ds = generate(CatalogSpec(), catalog)  # 500 services / 37_033 devices
    assert time.perf_counter() - t0 < 30.0
    assert len(ds.documents) == 37_033

    store = documents_from(ds.documents, catalog)
    search = make_iot_search(catalog, store, pipeline, catalog_index, SyntheticRouting())
    engine = AgentEngine(search, SyntheticMaps(GAZETTEER), SyntheticWeb(), [TORONTO_REGION])
    state = AppState(
        config=AppConfig(), catalog=catalog, store=store, engine=engine, regions=[TORONTO_REGION]
    )
    client = TestClient(create_app(state))

    health = client.get("/health").json()
    assert health["services"] == 500
    assert health["documents"] == 37_033
    assert health["index_entries"] == 500

    def ask(query: str) -> None:
        resp = client.post("/query", json={"query": query, "origin": ORIGIN_JSON})
        assert resp.status_code == 200

    queries = [
        "quiet dog park",
        "cheapest gas station",
        "coffee shop with wifi",
        "shortest lineup at a walk-in clinic",
        "grocery store nearby",
    ]
    stats = run_latency_probe(ask, queries, repeats=20)
    assert stats.count == 100
    assert stats.p99_s < 0.5, stats.to_json()


# -- browser client round trip -------------------------------------------------------------


@pytest.mark.skip(reason="exercised by the frontend package's own test suite (frontend/)")
def test_webui_round_trip_delegated_to_frontend_suite():
    pass
