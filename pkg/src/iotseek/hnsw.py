"""Layered navigable small-world index over unit vectors, searched by cosine.

Vectors must be unit-norm, so cosine similarity is a plain dot product and
the internal distance is ``1 - dot``. Builds are deterministic: level draws
come from a seeded generator, and all orderings break ties by entry name, so
the same insertion order always produces a byte-identical snapshot.

The catalog this serves is append-only; there is no delete. Catalog changes
rebuild a fresh index and swap it in.
"""

from __future__ import annotations

import heapq
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_MAGIC = b"IOSKHNSW"
_VERSION = 1


class IndexError_(ValueError):
    pass


class DuplicateNameError(IndexError_):
    pass


class DimensionMismatchError(IndexError_):
    pass


@dataclass(frozen=True)
class IndexParams:
    """Graph construction / search parameters.

    ``level_lambda`` is the multiplier applied to the exponential level draw;
    the default 1/ln(M) gives the usual 1/M per-level occupancy decay.
    """

    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    level_lambda: float | None = None
    seed: int = 2024

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef values must be >= 1")
        if self.level_lambda is None:
            object.__setattr__(self, "level_lambda", 1.0 / math.log(self.M))

    def replace_ef_search(self, ef_search: int) -> "IndexParams":
        return IndexParams(self.M, self.ef_construction, ef_search, self.level_lambda, self.seed)


class HnswIndex:
    """Insert-only vector index mapping entry names to unit vectors."""

    def __init__(self, dimension: int, params: IndexParams | None = None):
        self.dimension = dimension
        self.params = params or IndexParams()
        self.names: list[str] = []
        self.name_to_id: dict[str, int] = {}
        self.levels: list[int] = []
        # neighbors[node][layer] -> list of node ids, closest first
        self.neighbors: list[list[list[int]]] = []
        self.entry_point: int = -1
        self.max_level: int = -1
        self._vectors = np.zeros((0, dimension), dtype=np.float64)
        self._rng = np.random.default_rng(self.params.seed)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors[: len(self.names)]

    # -- construction ---------------------------------------------------------

    def _check_vector(self, vector: np.ndarray) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"vector has dimension {v.shape[0]}, index expects {self.dimension}"
            )
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise IndexError_(f"vector must be unit-norm (got {norm})")
        return v

    def _grow(self, v: np.ndarray) -> int:
        node = len(self.names)
        if node >= self._vectors.shape[0]:
            new_cap = max(8, self._vectors.shape[0] * 2)
            grown = np.zeros((new_cap, self.dimension), dtype=np.float64)
            grown[: self._vectors.shape[0]] = self._vectors
            self._vectors = grown
        self._vectors[node] = v
        return node

    def insert(self, name: str, vector: np.ndarray) -> int:
        if name in self.name_to_id:
            raise DuplicateNameError(f"entry {name!r} already indexed")
        v = self._check_vector(vector)
        level = int(-math.log(max(self._rng.random(), 1e-300)) * self.params.level_lambda)

        node = self._grow(v)
        self.names.append(name)
        self.name_to_id[name] = node
        self.levels.append(level)
        self.neighbors.append([[] for _ in range(level + 1)])

        if self.entry_point < 0:
            self.entry_point = node
            self.max_level = level
            return node

        eps = [self.entry_point]
        for layer in range(self.max_level, level, -1):
            eps = [self._search_layer(v, eps, 1, layer)[0][1]]

        for layer in range(min(level, self.max_level), -1, -1):
            candidates = self._search_layer(v, eps, self.params.ef_construction, layer)
            selected = self._select_neighbors(v, [c[1] for c in candidates], self.params.M)
            self.neighbors[node][layer] = list(selected)
            max_degree = self.params.M * 2 if layer == 0 else self.params.M
            for other in selected:
                links = self.neighbors[other][layer]
                links.append(node)
                if len(links) > max_degree:
                    self.neighbors[other][layer] = self._select_neighbors(
                        self._vectors[other], links, max_degree
                    )
            eps = [c[1] for c in candidates]

        if level > self.max_level:
            self.entry_point = node
            self.max_level = level
        return node

    def _select_neighbors(self, target: np.ndarray, candidates: Sequence[int], m: int) -> list[int]:
        """Diversity-preserving neighbor selection: prefer candidates closer
        to the target than to anything already kept, then fill with the
        closest pruned ones."""
        ids = list(dict.fromkeys(candidates))
        dists = 1.0 - self._vectors[ids] @ target
        order = sorted(zip(dists, [self.names[i] for i in ids], ids))
        kept: list[int] = []
        kept_d: list[float] = []
        pruned: list[int] = []
        for d, _name, cid in order:
            if len(kept) >= m:
                pruned.append(cid)
                continue
            if kept and np.any((1.0 - self._vectors[kept] @ self._vectors[cid]) < d):
                pruned.append(cid)
            else:
                kept.append(cid)
                kept_d.append(d)
        for cid in pruned:
            if len(kept) >= m:
                break
            kept.append(cid)
        return kept

    # -- search ---------------------------------------------------------------

    def _search_layer(
        self, q: np.ndarray, entry_ids: Sequence[int], ef: int, layer: int
    ) -> list[tuple[float, int]]:
        """Best-first expansion; returns up to ef (distance, node) pairs."""
        visited = set(entry_ids)
        entry_d = 1.0 - self._vectors[list(entry_ids)] @ q
        candidates: list[tuple[float, int]] = [
            (float(d), i) for d, i in zip(entry_d, entry_ids)
        ]
        heapq.heapify(candidates)
        results = [(-d, i) for d, i in candidates]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)

        while candidates:
            d, node = heapq.heappop(candidates)
            if len(results) == ef and d > -results[0][0]:
                break
            fresh = [n for n in self.neighbors[node][layer] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            dists = 1.0 - self._vectors[fresh] @ q
            for nd, nid in zip(dists, fresh):
                nd = float(nd)
                if len(results) < ef or nd < -results[0][0]:
                    heapq.heappush(candidates, (nd, nid))
                    heapq.heappush(results, (-nd, nid))
                    if len(results) > ef:
                        heapq.heappop(results)
        out = [(-d, i) for d, i in results]
        out.sort(key=lambda pair: (pair[0], self.names[pair[1]]))
        return out

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k entries by descending cosine similarity."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.params.ef_search < k:
            raise ValueError(f"ef_search={self.params.ef_search} must be >= k={k}")
        if not self.names:
            return []
        q = self._check_vector(query)
        eps = [self.entry_point]
        for layer in range(self.max_level, 0, -1):
            eps = [self._search_layer(q, eps, 1, layer)[0][1]]
        hits = self._search_layer(q, eps, self.params.ef_search, 0)[:k]
        return [(self.names[i], 1.0 - d) for d, i in hits]

    def brute_force_search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact top-k by full scan; the recall oracle for ``search``."""
        if not self.names:
            return []
        q = self._check_vector(query)
        sims = self.vectors @ q
        order = sorted(zip(-sims, self.names), key=lambda t: (t[0], t[1]))
        return [(name, -neg) for neg, name in order[: max(1, k)]]

    # -- integrity ------------------------------------------------------------

    def validate(self) -> None:
        """Check structural invariants; raises AssertionError on violation."""
        for node, per_layer in enumerate(self.neighbors):
            assert len(per_layer) == self.levels[node] + 1
            for layer, links in enumerate(per_layer):
                for other in links:
                    assert self.levels[other] >= layer, (
                        f"edge at layer {layer} points to node of level {self.levels[other]}"
                    )
        norms = np.linalg.norm(self.vectors, axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-6), "stored vector lost unit norm"
        for layer in range(self.max_level + 1):
            members = {i for i, lvl in enumerate(self.levels) if lvl >= layer}
            if not members:
                continue
            start = self.entry_point if layer <= self.levels[self.entry_point] else next(iter(members))
            seen = {start}
            frontier = [start]
            while frontier:
                cur = frontier.pop()
                for nxt in self.neighbors[cur][layer]:
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            assert seen == members, f"layer {layer} not connected from entry point"

    # -- snapshots -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        p = self.params
        buf.write(_MAGIC)
        buf.write(
            struct.pack(
                "<IIIIIdqqqq",
                _VERSION,
                self.dimension,
                p.M,
                p.ef_construction,
                p.ef_search,
                p.level_lambda,
                p.seed,
                len(self.names),
                self.entry_point,
                self.max_level,
            )
        )
        for name, level in zip(self.names, self.levels):
            raw = name.encode()
            buf.write(struct.pack("<Iq", len(raw), level))
            buf.write(raw)
        buf.write(self.vectors.astype("<f8").tobytes())
        for per_layer in self.neighbors:
            for links in per_layer:
                buf.write(struct.pack("<I", len(links)))
                buf.write(struct.pack(f"<{len(links)}I", *links))
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def snapshot_hash(self) -> str:
        """Digest of the serialized graph; equal builds hash equal."""
        import hashlib

        return hashlib.sha256(self.to_bytes()).hexdigest()

    @staticmethod
    def from_bytes(data: bytes) -> "HnswIndex":
        buf = io.BytesIO(data)
        magic = buf.read(len(_MAGIC))
        if magic != _MAGIC:
            raise IndexError_("not an index snapshot (bad magic)")
        version, dim, m, ef_c, ef_s, lam, seed, count, entry, max_level = struct.unpack(
            "<IIIIIdqqqq", buf.read(struct.calcsize("<IIIIIdqqqq"))
        )
        if version != _VERSION:
            raise IndexError_(f"unsupported snapshot version {version}")
        index = HnswIndex(dim, IndexParams(m, ef_c, ef_s, lam, seed))
        names: list[str] = []
        levels: list[int] = []
        for _ in range(count):
            nlen, level = struct.unpack("<Iq", buf.read(12))
            names.append(buf.read(nlen).decode())
            levels.append(level)
        vectors = np.frombuffer(buf.read(count * dim * 8), dtype="<f8").reshape(count, dim)
        neighbors: list[list[list[int]]] = []
        for level in levels:
            per_layer = []
            for _ in range(level + 1):
                (deg,) = struct.unpack("<I", buf.read(4))
                per_layer.append(list(struct.unpack(f"<{deg}I", buf.read(4 * deg))))
            neighbors.append(per_layer)
        index.names = names
        index.name_to_id = {n: i for i, n in enumerate(names)}
        index.levels = levels
        index.neighbors = neighbors
        index.entry_point = entry
        index.max_level = max_level
        index._vectors = np.array(vectors, dtype=np.float64)
        index._rng = np.random.default_rng(seed)
        index._rng.random(count)  # fast-forward level draws for further inserts
        return index

    @staticmethod
    def load(path: str | Path) -> "HnswIndex":
        return HnswIndex.from_bytes(Path(path).read_bytes())


def build_index(
    entries: Sequence[tuple[str, np.ndarray]],
    params: IndexParams | None = None,
) -> HnswIndex:
    """Build an index from (name, unit vector) pairs in the given order."""
    if not entries:
        raise ValueError("cannot build an index from zero entries")
    dim = int(np.asarray(entries[0][1]).reshape(-1).shape[0])
    index = HnswIndex(dim, params)
    for name, vector in entries:
        index.insert(name, vector)
    return index
