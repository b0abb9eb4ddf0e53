"""Text to unit vector, step by step.

Runs one sentence through the full pipeline — tokenize, per-token encode,
masked mean pooling, normalization — then shows the property the rest of
the stack depends on: related phrasings land closer than unrelated ones.
"""

from __future__ import annotations

import numpy as np

from iotseek.embedding import EmbeddingPipeline, create_provider, mean_pool, normalize


def main() -> None:
    pipeline = EmbeddingPipeline(create_provider("hashed-ngram"))
    text = "quiet dog park with parking"

    batch, token_rows = pipeline.tokenize(text)
    print(f"input: {text!r}")
    print(f"tokens: {token_rows[0]}")
    print(f"mask:   {batch.attention_mask[0].tolist()}")

    per_token = pipeline.encode(batch, token_rows)
    print(f"per-token vectors: shape {per_token.shape}")

    pooled = mean_pool(per_token, batch.attention_mask)
    vec = normalize(pooled[0])
    print(f"pooled + normalized: dim {vec.shape[0]}, norm {np.linalg.norm(vec):.6f}")

    # embed_text does all of the above in one call
    assert np.allclose(pipeline.embed_text(text), vec)

    # cosine similarity is just a dot product on unit vectors
    def sim(a: str, b: str) -> float:
        return float(pipeline.embed_text(a) @ pipeline.embed_text(b))

    pairs = [
        ("dog park", "park for dogs"),
        ("dog park", "off-leash dog area"),
        ("dog park", "tax accountant"),
    ]
    print("\nsimilarities:")
    for a, b in pairs:
        print(f"  {a!r} vs {b!r}: {sim(a, b):+.4f}")
    assert sim("dog park", "park for dogs") > sim("dog park", "tax accountant")

    # multi-sentence input: each sentence is pooled separately, then averaged
    two = pipeline.embed_text("Cheap gas nearby. Short wait preferred.")
    print(f"\nmulti-sentence embedding norm: {np.linalg.norm(two):.6f}")


if __name__ == "__main__":
    main()
