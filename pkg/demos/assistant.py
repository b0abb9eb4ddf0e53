"""The whole assistant in one sitting.

Wires store, embeddings, index, and synthetic travel/maps/web providers into
the four-stage loop, then walks through the interesting query shapes: an
in-region service search, a session follow-up, an out-of-region city, a web
question, and finally a trace replayed step by step.
"""

from __future__ import annotations

import json

from iotseek.agents import GAZETTEER, AgentEngine, SessionMemory, replay_trace
from iotseek.dataset import TORONTO_REGION, CatalogSpec, documents_from, generate
from iotseek.embedding import EmbeddingPipeline, create_provider
from iotseek.geo import GeoPoint
from iotseek.providers import SyntheticMaps, SyntheticRouting, SyntheticWeb
from iotseek.retrieval import IotSearch, SearchConfig, build_catalog_index

ORIGIN = GeoPoint(43.6817, -79.3916)


def show(result) -> None:
    print(f"  route={result.route} accepted={result.accepted} "
          f"cycles={result.cycles} hops={result.hops_used} flags={result.flags()}")
    print(f"  {result.answer.text}")
    for row in result.answer.results[:3]:
        name = row.get("Service Name") or row.get("name") or row.get("title")
        print(f"    - {name}")
    print()


def main() -> None:
    dataset = generate(CatalogSpec(n_devices=4_000, seed=1))
    store = documents_from(dataset.documents, dataset.catalog)
    pipeline = EmbeddingPipeline(create_provider("hashed-ngram"))
    index = build_catalog_index(dataset.catalog, pipeline)
    search = IotSearch(dataset.catalog, store, pipeline, index, SyntheticRouting(), SearchConfig())
    engine = AgentEngine(search, SyntheticMaps(GAZETTEER), SyntheticWeb(), [TORONTO_REGION])

    session = SessionMemory()
    print("> quiet dog park with parking")
    first = engine.run_query("quiet dog park with parking", ORIGIN, session)
    show(first)

    print("> which one is best rated?   (follow-up, same session)")
    show(engine.run_query("which one is best rated?", ORIGIN, session))

    print("> chinese restaurant in cairo   (outside every coverage zone)")
    show(engine.run_query("chinese restaurant in cairo", ORIGIN))

    print("> weather in Oshawa   (web question)")
    show(engine.run_query("weather in Oshawa", ORIGIN))

    # every run is traced; the trace alone reconstructs the outcome
    print("trace of the first query:")
    for step in first.steps:
        print(f"  {step.agent:10s} {step.event:18s} {json.dumps(step.detail)}")
    replayed = replay_trace(first.trace_json())
    assert replayed["route"] == first.route
    assert replayed["accepted"] == first.accepted
    print("\nreplayed state matches the live result")


if __name__ == "__main__":
    main()
