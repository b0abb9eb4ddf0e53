"""Service lookup through the graph index.

Embeds all 500 service descriptions, builds the layered graph index, and
answers a few free-text intents. Ends with a snapshot round trip: the index
serializes to bytes, reloads identically, and keeps growing with the same
deterministic level sequence.
"""

from __future__ import annotations

import numpy as np

from iotseek.dataset import default_catalog
from iotseek.embedding import EmbeddingPipeline, create_provider
from iotseek.hnsw import HnswIndex, IndexParams
from iotseek.retrieval import build_catalog_index


def main() -> None:
    catalog = default_catalog()
    pipeline = EmbeddingPipeline(create_provider("hashed-ngram"))
    index = build_catalog_index(catalog, pipeline, IndexParams(M=16, ef_search=64))
    print(f"indexed {len(index)} services, dim {index.dimension}")

    for intent in (
        "somewhere to walk my dog",
        "gas station with cheap fuel",
        "toothache needs a dentist",
    ):
        hits = index.search(pipeline.embed_text(intent), 3)
        ranked = ", ".join(f"{name} ({score:.3f})" for name, score in hits)
        print(f"  {intent!r} -> {ranked}")

    # spot-check recall against a full scan
    names = index.names
    vectors = index.vectors
    rng = np.random.default_rng(0)
    queries = rng.standard_normal((200, index.dimension))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    agree = 0
    for q in queries:
        approx = {n for n, _ in index.search(q, 3)}
        exact = {names[j] for j in np.argsort(-(vectors @ q))[:3]}
        agree += len(approx & exact)
    print(f"recall@3 over 200 random queries: {agree / 600:.3f}")

    # snapshot: same bytes in, same graph out
    blob = index.to_bytes()
    clone = HnswIndex.from_bytes(blob)
    print(f"snapshot {len(blob)} bytes, hash {index.snapshot_hash()[:16]}…")
    assert clone.snapshot_hash() == index.snapshot_hash()
    assert clone.search(pipeline.embed_text("bike repair"), 3) == index.search(
        pipeline.embed_text("bike repair"), 3
    )
    print("reloaded clone answers identically")


if __name__ == "__main__":
    main()
