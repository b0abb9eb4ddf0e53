"""HTTP front end: query answering, ingestion, health, traces, admin.

The app is a thin shell over ``AgentEngine`` and ``DocumentStore``. All
state lives on one ``AppState`` so tests can build it directly and the
CLI can build it from config. Writes go through the ingest layer; reads
never block writes beyond the per-collection locks.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel

from .agents import GAZETTEER, AgentEngine, QueryTooLongError, SessionMemory
from .config import AppConfig
from .dataset import (
    CatalogSpec,
    TORONTO_REGION,
    ServiceCatalog,
    default_catalog,
    documents_from,
    generate,
    load_dataset,
)
from .embedding import EmbeddingPipeline, create_provider
from .geo import GeoPoint
from .hnsw import HnswIndex, IndexParams
from .ingest import DeviceMessage, ingest_stream, parse_message_lines
from .llm import create_backend
from .model import Region
from .providers import ProviderError, create_providers
from .retrieval import IotSearch, SearchConfig, build_catalog_index
from .store import DocumentStore, GeoQuery, UnknownServiceError

DEFAULT_DEMO_DEVICES = 2000  # dataset size when serving without --data-dir


@dataclass
class AppState:
    config: AppConfig
    catalog: ServiceCatalog
    store: DocumentStore
    engine: AgentEngine
    regions: list[Region]
    traces: "OrderedDict[str, dict[str, Any]]" = field(default_factory=OrderedDict)
    sessions: "OrderedDict[str, SessionMemory]" = field(default_factory=OrderedDict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def remember_trace(self, trace_id: str, trace: dict[str, Any]) -> None:
        with self.lock:
            self.traces[trace_id] = trace
            self.traces.move_to_end(trace_id)
            while len(self.traces) > self.config.trace_ring_size:
                self.traces.popitem(last=False)

    def session(self, session_id: str) -> SessionMemory:
        with self.lock:
            mem = self.sessions.get(session_id)
            if mem is None:
                mem = SessionMemory()
                self.sessions[session_id] = mem
            self.sessions.move_to_end(session_id)
            while len(self.sessions) > self.config.max_sessions:
                self.sessions.popitem(last=False)
            return mem


def build_state(config: AppConfig) -> AppState:
    """Assemble catalog, store, index, providers, and engine from config."""
    if config.data_dir:
        catalog, store = load_dataset(config.data_dir)
    else:
        catalog = default_catalog()
        dataset = generate(
            CatalogSpec(n_services=len(catalog), n_devices=DEFAULT_DEMO_DEVICES, seed=0),
            catalog,
        )
        store = documents_from(dataset.documents, catalog)

    pipeline = EmbeddingPipeline(create_provider(config.embedding_provider))
    params = IndexParams(
        M=config.hnsw_m,
        ef_construction=config.hnsw_ef_construction,
        ef_search=config.hnsw_ef_search,
        seed=config.hnsw_seed,
    )
    if config.index_path:
        index = HnswIndex.load(config.index_path)
    else:
        index = build_catalog_index(catalog, pipeline, params)

    bundle = create_providers(
        config.provider_mode,
        fixtures_dir=config.fixtures_dir,
        routing_url=config.routing_url,
        routing_api_key=config.routing_api_key,
        maps_url=config.maps_url,
        web_url=config.web_url,
        gazetteer=GAZETTEER,
    )
    regions = [TORONTO_REGION]
    iot = IotSearch(
        catalog,
        store,
        pipeline,
        index,
        bundle.routing,
        SearchConfig(
            k_services=config.k_services,
            k_documents=config.k_documents,
            context_policy=config.context_policy,
        ),
    )
    backend = create_backend(
        config.llm_provider,
        base_url=config.llm_base_url,
        api_key=config.llm_api_key,
        model=config.llm_model,
        templates_dir=config.templates_dir,
    )
    engine = AgentEngine(
        iot, bundle.maps, bundle.web, regions,
        backend=backend, hop_budget=config.hop_budget,
    )
    return AppState(config=config, catalog=catalog, store=store, engine=engine, regions=regions)


class OriginBody(BaseModel):
    lat: float
    lon: float


class QueryRequest(BaseModel):
    query: str
    origin: OriginBody | None = None
    session_id: str | None = None


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="iotseek", docs_url=None, redoc_url=None)
    app.state.ctx = state
    default_origin = state.regions[0].bounds.centroid()

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "services": len(state.store.collections),
            "documents": state.store.document_count(),
            "index_entries": len(state.engine.iot.index),
            "index_hash": state.engine.iot.index.snapshot_hash(),
            "provider_mode": state.config.provider_mode,
        }

    @app.post("/query")
    def query(body: QueryRequest) -> dict[str, Any]:
        if not body.query.strip():
            raise HTTPException(400, "query is empty")
        if body.origin is not None:
            try:
                origin = GeoPoint(body.origin.lat, body.origin.lon)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
        else:
            origin = default_origin
        session = state.session(body.session_id) if body.session_id else None
        try:
            result = state.engine.run_query(body.query, origin, session=session)
        except QueryTooLongError as exc:
            raise HTTPException(422, str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc
        except ProviderError as exc:
            raise HTTPException(502, f"provider failure: {exc}") from exc
        state.remember_trace(result.trace_id, result.trace_json())
        results = result.answer.results
        response: dict[str, Any] = {
            "answer": result.answer.text,
            "alternatives": results[1:],
            "route": result.route,
            "trace_id": result.trace_id,
            "flags": result.flags(),
            "accepted": result.accepted,
            "hops_used": result.hops_used,
            "elapsed_ms": round(result.elapsed_s * 1000, 3),
        }
        if results:
            response["recommendation"] = results[0]
        return response

    @app.post("/ingest")
    async def ingest(request: Request, allow_create: bool = True) -> dict[str, Any]:
        raw = (await request.body()).decode("utf-8", errors="strict")
        if not raw.strip():
            raise HTTPException(400, "empty body")
        messages: list[DeviceMessage]
        try:
            try:
                decoded = json.loads(raw)
            except json.JSONDecodeError:
                messages = list(parse_message_lines(raw.splitlines()))
            else:
                if isinstance(decoded, list):
                    messages = [DeviceMessage.from_json(m) for m in decoded]
                else:
                    messages = [DeviceMessage.from_json(decoded)]
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(400, f"undecodable message: {exc}") from exc
        report = ingest_stream(state.store, messages, allow_create=allow_create)
        return report.to_json()

    @app.get("/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict[str, Any]:
        with state.lock:
            trace = state.traces.get(trace_id)
        if trace is None:
            raise HTTPException(404, f"no trace {trace_id!r}")
        return trace

    @app.post("/admin/reindex")
    def reindex() -> dict[str, Any]:
        pipeline = state.engine.iot.pipeline
        params = IndexParams(
            M=state.config.hnsw_m,
            ef_construction=state.config.hnsw_ef_construction,
            ef_search=state.config.hnsw_ef_search,
            seed=state.config.hnsw_seed,
        )
        fresh = build_catalog_index(state.catalog, pipeline, params)
        state.engine.iot.index = fresh  # atomic swap; readers see old or new
        return {"rebuilt": True, "entries": len(fresh), "index_hash": fresh.snapshot_hash()}

    @app.get("/collections/{service}/near")
    def near(service: str, lat: float, lon: float, k: int = 3) -> list[dict[str, Any]]:
        if k < 1 or k > 100:
            raise HTTPException(400, "k must be in 1..100")
        try:
            origin = GeoPoint(lat, lon)
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc
        try:
            hits = state.store.nearest(
                GeoQuery(origin=origin, service_names=(service,), limit=k)
            )
        except UnknownServiceError:
            raise HTTPException(404, f"unknown service {service!r}") from None
        return [
            {"distance_m": round(h.distance_m, 2), **h.document.to_json()} for h in hits
        ]

    return app


def serve(config: AppConfig) -> None:
    import uvicorn

    state = build_state(config)
    app = create_app(state)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
