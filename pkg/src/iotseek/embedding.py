"""Text embedding pipeline: tokenize, per-token vectors, masked mean pooling,
L2 normalization.

The pipeline is provider-agnostic. The bundled ``hashed-ngram`` provider maps
each token to a deterministic vector built from hashed character n-grams, so
the whole retrieval stack runs offline and reproducibly. A remote
sentence-embedding service can be plugged in by name instead (see
``create_provider``); nothing downstream depends on which provider produced
the vectors beyond their dimension.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_TOKEN_RE = re.compile(r"[a-z0-9']+")


class EmbeddingError(ValueError):
    pass


class ProviderRequestError(RuntimeError):
    """A remote embedding provider failed to produce vectors."""


@dataclass(frozen=True)
class TokenBatch:
    """Rectangular token matrix: one row per sentence chunk, padded with
    mask 0. Every row has at least one unmasked token."""

    token_ids: np.ndarray  # (rows, max_len) int64
    attention_mask: np.ndarray  # (rows, max_len) int64, values in {0, 1}

    def __post_init__(self) -> None:
        if self.token_ids.shape != self.attention_mask.shape:
            raise EmbeddingError("token_ids and attention_mask shapes differ")
        mask = self.attention_mask
        if not np.isin(mask, (0, 1)).all():
            raise EmbeddingError("attention mask values must be 0 or 1")
        if (mask.sum(axis=1) == 0).any():
            raise EmbeddingError("every sentence row needs at least one unmasked token")

    @property
    def rows(self) -> int:
        return self.token_ids.shape[0]

    def token_count(self) -> int:
        return int(self.attention_mask.sum())


def _stable_hash(data: str) -> int:
    return int.from_bytes(hashlib.blake2b(data.encode(), digest_size=8).digest(), "big")


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENTENCE_SPLIT_RE.split(text)]
    return [p for p in parts if p]


def tokenize(text: str, max_tokens: int = 128) -> tuple[TokenBatch, list[list[str]]]:
    """Split ``text`` into sentence rows of word tokens.

    Sentences longer than ``max_tokens`` are chunked into consecutive rows.
    Returns the padded batch plus the raw token strings per row (the provider
    embeds strings; ids exist for parity with model-style tokenizers).
    """
    if not text or not text.strip():
        raise EmbeddingError("cannot tokenize empty text")
    rows: list[list[str]] = []
    for sentence in split_sentences(text):
        tokens = _TOKEN_RE.findall(sentence.lower())
        if not tokens:
            continue
        for i in range(0, len(tokens), max_tokens):
            rows.append(tokens[i : i + max_tokens])
    if not rows:
        raise EmbeddingError(f"no tokens in text {text!r}")

    width = max(len(r) for r in rows)
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.int64)
    for r, tokens in enumerate(rows):
        for c, tok in enumerate(tokens):
            ids[r, c] = _stable_hash(tok) & 0x7FFF_FFFF_FFFF_FFFF
            mask[r, c] = 1
    return TokenBatch(ids, mask), rows


def mean_pool(per_token_vectors: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Average token vectors weighted by the attention mask.

    out_j = sum_i mask_i * v_ij / sum_i mask_i
    """
    vectors = np.asarray(per_token_vectors, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if vectors.shape[:-1] != mask.shape:
        raise EmbeddingError(
            f"shape mismatch: vectors {vectors.shape} vs mask {mask.shape}"
        )
    denom = mask.sum(axis=-1)
    if np.any(denom == 0):
        raise EmbeddingError("all-zero attention mask")
    weighted = (vectors * mask[..., None]).sum(axis=-2)
    return weighted / denom[..., None]


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm. Raises on zero or non-finite input."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise EmbeddingError("vector has non-finite components")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise EmbeddingError("cannot normalize the zero vector")
    return v / norm


class EmbedderProvider(Protocol):
    name: str
    dimension: int
    deterministic: bool
    max_tokens: int

    def encode_tokens(self, token_rows: Sequence[Sequence[str]], width: int) -> np.ndarray:
        """Return (rows, width, dimension) per-token vectors, padding included."""
        ...


class HashedNgramProvider:
    """Deterministic character n-gram hashing embedder.

    Each token's vector is the signed sum of its boundary-marked character
    n-grams, feature-hashed into ``dimension`` buckets. Related words share
    subword features, which is enough structure for retrieval tests.
    """

    def __init__(self, dimension: int = 256, ngram_sizes: Sequence[int] = (3, 4), max_tokens: int = 128):
        self.name = "hashed-ngram"
        self.dimension = dimension
        self.deterministic = True
        self.max_tokens = max_tokens
        self.ngram_sizes = tuple(ngram_sizes)
        self._token_cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        marked = f"^{token}$"
        vec = np.zeros(self.dimension, dtype=np.float64)
        for n in self.ngram_sizes:
            if len(marked) < n:
                grams = [marked]
            else:
                grams = [marked[i : i + n] for i in range(len(marked) - n + 1)]
            for gram in grams:
                h = _stable_hash(gram)
                bucket = h % self.dimension
                sign = 1.0 if (h >> 32) & 1 else -1.0
                vec[bucket] += sign
        with self._lock:
            self._token_cache[token] = vec
        return vec

    def encode_tokens(self, token_rows: Sequence[Sequence[str]], width: int) -> np.ndarray:
        out = np.zeros((len(token_rows), width, self.dimension), dtype=np.float64)
        pad = self._token_vector("\x00pad")
        out += pad  # padding positions carry a real vector; the mask must hide them
        for r, tokens in enumerate(token_rows):
            for c, tok in enumerate(tokens):
                out[r, c] = self._token_vector(tok)
        return out


class RemoteProvider:
    """Adapter for an HTTP sentence-embedding service.

    POSTs ``{"texts": [...]}`` to ``{base_url}/embed`` and expects
    ``{"vectors": [[...], ...]}``. Token-level output is emulated by giving
    every token of a row the row's sentence vector, which keeps the pooling
    stage a no-op for this provider.
    """

    def __init__(self, base_url: str, dimension: int, api_key: str | None = None, timeout_s: float = 10.0):
        self.name = "remote"
        self.dimension = dimension
        self.deterministic = False
        self.max_tokens = 512
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s
        self._client = None

    def _post(self, texts: list[str]) -> list[list[float]]:
        import httpx

        if self._client is None:
            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
            self._client = httpx.Client(base_url=self.base_url, headers=headers, timeout=self.timeout_s)
        try:
            resp = self._client.post("/embed", json={"texts": texts})
            resp.raise_for_status()
            return resp.json()["vectors"]
        except Exception as e:  # noqa: BLE001 - one typed surface for callers
            raise ProviderRequestError(f"embedding request failed: {e}") from e

    def encode_tokens(self, token_rows: Sequence[Sequence[str]], width: int) -> np.ndarray:
        texts = [" ".join(tokens) for tokens in token_rows]
        vectors = self._post(texts)
        out = np.zeros((len(token_rows), width, self.dimension), dtype=np.float64)
        for r, vec in enumerate(vectors):
            if len(vec) != self.dimension:
                raise ProviderRequestError(
                    f"provider returned dimension {len(vec)}, expected {self.dimension}"
                )
            out[r, : max(1, len(token_rows[r])), :] = np.asarray(vec, dtype=np.float64)
        return out


class SentenceTransformerProvider:
    """Optional local sentence-transformers adapter; requires model weights."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self.name = f"sbert:{model_name}"
        self.dimension = int(self._model.get_sentence_embedding_dimension())
        self.deterministic = True
        self.max_tokens = 256

    def encode_tokens(self, token_rows: Sequence[Sequence[str]], width: int) -> np.ndarray:
        texts = [" ".join(tokens) for tokens in token_rows]
        vectors = self._model.encode(texts, normalize_embeddings=False)
        out = np.zeros((len(token_rows), width, self.dimension), dtype=np.float64)
        for r, vec in enumerate(np.asarray(vectors, dtype=np.float64)):
            out[r, : max(1, len(token_rows[r])), :] = vec
        return out


def create_provider(name: str, **kwargs) -> EmbedderProvider:
    if name == "hashed-ngram":
        return HashedNgramProvider(**kwargs)
    if name == "remote":
        return RemoteProvider(**kwargs)
    if name.startswith("sbert"):
        _, _, model = name.partition(":")
        return SentenceTransformerProvider(model) if model else SentenceTransformerProvider()
    raise ValueError(f"unknown embedding provider {name!r}")


class EmbeddingPipeline:
    """tokenize -> provider -> mean_pool -> normalize, with sentence rows
    averaged and renormalized for multi-sentence texts."""

    def __init__(self, provider: EmbedderProvider, cache: "EmbeddingCache | None" = None):
        self.provider = provider
        self.cache = cache

    @property
    def dimension(self) -> int:
        return self.provider.dimension

    def tokenize(self, text: str) -> tuple[TokenBatch, list[list[str]]]:
        return tokenize(text, max_tokens=self.provider.max_tokens)

    def encode(self, batch: TokenBatch, token_rows: list[list[str]]) -> np.ndarray:
        return self.provider.encode_tokens(token_rows, batch.token_ids.shape[1])

    def pool(self, per_token: np.ndarray, batch: TokenBatch) -> np.ndarray:
        return mean_pool(per_token, batch.attention_mask)

    def embed_text(self, text: str) -> np.ndarray:
        if self.cache is not None:
            hit = self.cache.get(self.provider.name, text)
            if hit is not None:
                return hit
        batch, token_rows = self.tokenize(text)
        per_token = self.encode(batch, token_rows)
        sentence_vectors = self.pool(per_token, batch)
        pooled = sentence_vectors.mean(axis=0)
        result = normalize(pooled)
        if self.cache is not None:
            self.cache.put(self.provider.name, text, result)
        return result

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_text(t) for t in texts])


class EmbeddingCache:
    """JSON file cache keyed by (provider name, sha256 of text)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data: dict[str, list[float]] = {}
        if self.path.exists():
            self._data = json.loads(self.path.read_text())

    @staticmethod
    def _key(provider: str, text: str) -> str:
        digest = hashlib.sha256(text.encode()).hexdigest()[:32]
        return f"{provider}:{digest}"

    def get(self, provider: str, text: str) -> np.ndarray | None:
        with self._lock:
            vec = self._data.get(self._key(provider, text))
        return None if vec is None else np.asarray(vec, dtype=np.float64)

    def put(self, provider: str, text: str, vector: np.ndarray) -> None:
        with self._lock:
            self._data[self._key(provider, text)] = [float(x) for x in vector]

    def save(self) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._data, sort_keys=True))
