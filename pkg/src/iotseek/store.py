"""Per-service document collections with exact nearest-neighbour geo queries.

Each collection keeps a uniform lat/lon grid over its documents. A nearest
query expands square rings of cells around the origin and stops once the
closest possible unvisited cell is provably farther than the current k-th
candidate, then ranks the survivors by exact haversine distance. Results are
therefore identical to a brute-force haversine sort (ties broken by node_id).
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .geo import EARTH_RADIUS_M, GeoPoint, haversine_m
from .model import DeviceDocument, ServiceDescriptor, canonical_service_name, document_line

DocumentFilter = Callable[[DeviceDocument], bool]

# Past this many rings, finish by scanning the not-yet-visited cells directly;
# the result stays exact and the worst case stays bounded.
_FALLBACK_RINGS = 64


class UnknownServiceError(KeyError):
    pass


@dataclass(frozen=True)
class GeoQuery:
    """Nearest-k request over one or more service collections."""

    service_names: Sequence[str]
    origin: GeoPoint
    limit: int
    filters: Sequence[DocumentFilter] = ()

    def __post_init__(self) -> None:
        if not self.service_names:
            raise ValueError("service_names must be nonempty")
        if self.limit < 1:
            raise ValueError("limit must be >= 1")


@dataclass(frozen=True)
class NearestHit:
    document: DeviceDocument
    distance_m: float


@dataclass
class CleaningReport:
    rates_imputed: int = 0
    occupancy_missing: int = 0
    services_without_rates: list[str] = field(default_factory=list)


class _Grid:
    """Sparse uniform lat/lon grid; cell size in degrees."""

    def __init__(self, cell_deg: float = 0.05):
        self.cell_deg = cell_deg
        self.n_lat = max(1, math.ceil(180.0 / cell_deg))
        self.n_lon = max(1, math.ceil(360.0 / cell_deg))
        self.cells: dict[tuple[int, int], set[str]] = {}

    def cell_of(self, p: GeoPoint) -> tuple[int, int]:
        i = min(int((p.lat + 90.0) / self.cell_deg), self.n_lat - 1)
        j = int(((p.lon + 180.0) % 360.0) / self.cell_deg) % self.n_lon
        return i, j

    def add(self, node_id: str, p: GeoPoint) -> None:
        self.cells.setdefault(self.cell_of(p), set()).add(node_id)

    def remove(self, node_id: str, p: GeoPoint) -> None:
        key = self.cell_of(p)
        bucket = self.cells.get(key)
        if bucket is not None:
            bucket.discard(node_id)
            if not bucket:
                del self.cells[key]

    def node_ids(self) -> set[str]:
        out: set[str] = set()
        for bucket in self.cells.values():
            out |= bucket
        return out

    def ring_cells(self, center: tuple[int, int], r: int) -> Iterator[tuple[int, int]]:
        """Occupied cells at Chebyshev distance exactly r (lon wraps, lat clips)."""
        i0, j0 = center
        if r == 0:
            if center in self.cells:
                yield center
            return
        seen: set[tuple[int, int]] = set()
        for di in range(-r, r + 1):
            i = i0 + di
            if not 0 <= i < self.n_lat:
                continue
            if abs(di) == r:
                js = range(-r, r + 1)
            else:
                js = (-r, r)
            for dj in js:
                j = (j0 + dj) % self.n_lon
                key = (i, j)
                if key in seen:
                    continue
                seen.add(key)
                if key in self.cells:
                    yield key

    def ring_lower_bound_m(self, origin: GeoPoint, r: int) -> float:
        """A distance no point in any cell at ring >= r can beat."""
        if r <= 1:
            return 0.0
        sep_rad = math.radians((r - 1) * self.cell_deg)
        lat_bound = EARTH_RADIUS_M * min(sep_rad, math.pi)
        phi0 = math.radians(origin.lat)
        if sep_rad <= math.pi / 2.0:
            lon_bound = EARTH_RADIUS_M * math.asin(
                max(0.0, math.cos(phi0)) * math.sin(sep_rad)
            )
        else:
            lon_bound = EARTH_RADIUS_M * (math.pi / 2.0 - abs(phi0))
        return min(lat_bound, lon_bound)


class Collection:
    """Documents of one service, keyed by node_id, with a geo index."""

    def __init__(self, service_name: str, cell_deg: float = 0.05):
        self.service_name = service_name
        self.documents: dict[str, DeviceDocument] = {}
        self.grid = _Grid(cell_deg)
        self.lock = threading.RLock()
        self.version = 0  # bumped on every successful write

    def __len__(self) -> int:
        return len(self.documents)

    def upsert(self, doc: DeviceDocument) -> DeviceDocument | None:
        with self.lock:
            prev = self.documents.get(doc.node_id)
            if prev is not None:
                self.grid.remove(prev.node_id, prev.location)
            self.documents[doc.node_id] = doc
            self.grid.add(doc.node_id, doc.location)
            self.version += 1
            return prev

    def get(self, node_id: str) -> DeviceDocument | None:
        with self.lock:
            return self.documents.get(node_id)

    def delete(self, node_id: str) -> bool:
        with self.lock:
            doc = self.documents.pop(node_id, None)
            if doc is None:
                return False
            self.grid.remove(node_id, doc.location)
            self.version += 1
            return True

    def nearest(
        self, origin: GeoPoint, limit: int, filters: Sequence[DocumentFilter] = ()
    ) -> list[NearestHit]:
        with self.lock:
            return self._nearest_locked(origin, limit, filters)

    def _nearest_locked(
        self, origin: GeoPoint, limit: int, filters: Sequence[DocumentFilter]
    ) -> list[NearestHit]:
        grid = self.grid
        center = grid.cell_of(origin)
        total_cells = len(grid.cells)
        candidates: list[tuple[float, str, DeviceDocument]] = []
        cells_found = 0
        visited: set[tuple[int, int]] = set()

        def consider(cell: tuple[int, int]) -> None:
            nonlocal cells_found
            cells_found += 1
            visited.add(cell)
            for node_id in grid.cells[cell]:
                doc = self.documents[node_id]
                if all(f(doc) for f in filters):
                    candidates.append((haversine_m(origin, doc.location), node_id, doc))

        r = 0
        while cells_found < total_cells:
            if r > _FALLBACK_RINGS:
                for cell in set(grid.cells) - visited:
                    consider(cell)
                break
            for cell in grid.ring_cells(center, r):
                consider(cell)
            if len(candidates) >= limit:
                kth = heapq.nsmallest(limit, candidates)[-1][0]
                if grid.ring_lower_bound_m(origin, r + 1) > kth:
                    break
            r += 1

        top = heapq.nsmallest(limit, candidates)
        return [NearestHit(doc, dist) for dist, _node, doc in top]

    def brute_force_nearest(
        self, origin: GeoPoint, limit: int, filters: Sequence[DocumentFilter] = ()
    ) -> list[NearestHit]:
        """Full-scan oracle: exact haversine sort with (distance, node_id) ties."""
        with self.lock:
            scored = [
                (haversine_m(origin, doc.location), node_id, doc)
                for node_id, doc in self.documents.items()
                if all(f(doc) for f in filters)
            ]
        scored.sort()
        return [NearestHit(doc, dist) for dist, _node, doc in scored[:limit]]


class DocumentStore:
    """All collections of the catalog; one collection per service."""

    def __init__(self, services: Iterable[str | ServiceDescriptor], cell_deg: float = 0.05):
        self.collections: dict[str, Collection] = {}
        self._hash_cache: tuple[int, str] | None = None
        for svc in services:
            name = svc.name if isinstance(svc, ServiceDescriptor) else canonical_service_name(svc)
            self.collections[name] = Collection(name, cell_deg)

    def collection(self, service_name: str) -> Collection:
        name = canonical_service_name(service_name)
        try:
            return self.collections[name]
        except KeyError:
            raise UnknownServiceError(name) from None

    def upsert(self, doc: DeviceDocument) -> DeviceDocument | None:
        return self.collection(doc.service_name).upsert(doc)

    def get(self, service_name: str, node_id: str) -> DeviceDocument | None:
        return self.collection(service_name).get(node_id)

    def delete(self, service_name: str, node_id: str) -> bool:
        return self.collection(service_name).delete(node_id)

    def document_count(self) -> int:
        return sum(len(c) for c in self.collections.values())

    def nearest(self, query: GeoQuery) -> list[NearestHit]:
        merged: list[tuple[float, str, DeviceDocument]] = []
        for name in query.service_names:
            for hit in self.collection(name).nearest(query.origin, query.limit, query.filters):
                merged.append((hit.distance_m, hit.document.node_id, hit.document))
        merged.sort()
        return [NearestHit(doc, dist) for dist, _node, doc in merged[: query.limit]]

    def brute_force_nearest(self, query: GeoQuery) -> list[NearestHit]:
        merged: list[tuple[float, str, DeviceDocument]] = []
        for name in query.service_names:
            coll = self.collection(name)
            for hit in coll.brute_force_nearest(query.origin, len(coll), query.filters):
                merged.append((hit.distance_m, hit.document.node_id, hit.document))
        merged.sort()
        return [NearestHit(doc, dist) for dist, _node, doc in merged[: query.limit]]

    def version(self) -> int:
        """Total write count; cheap freshness token for caches."""
        return sum(c.version for c in self.collections.values())

    def content_hash(self) -> str:
        """Stable digest of the full store state; used to verify read-only paths.

        Memoized on the write counter, so repeated calls between writes are free.
        """
        version = self.version()
        cached = self._hash_cache
        if cached is not None and cached[0] == version:
            return cached[1]
        h = hashlib.sha256()
        for name in sorted(self.collections):
            coll = self.collections[name]
            with coll.lock:
                lines = sorted(document_line(d) for d in coll.documents.values())
            h.update(name.encode())
            for line in lines:
                h.update(line.encode())
        digest = h.hexdigest()
        if self.version() == version:  # don't cache a digest that raced a write
            self._hash_cache = (version, digest)
        return digest

    # -- persistence ---------------------------------------------------------

    def save(self, data_dir: str | Path) -> None:
        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        manifest = {"version": 1, "services": []}
        for idx, name in enumerate(sorted(self.collections)):
            coll = self.collections[name]
            fname = f"{idx:04d}.ndjson"
            with coll.lock:
                lines = sorted(document_line(d) for d in coll.documents.values())
            (data_dir / fname).write_text("\n".join(lines) + ("\n" if lines else ""))
            manifest["services"].append({"name": name, "file": fname, "count": len(lines)})
        (data_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )

    @staticmethod
    def load(data_dir: str | Path, cell_deg: float = 0.05) -> "DocumentStore":
        data_dir = Path(data_dir)
        manifest = json.loads((data_dir / "manifest.json").read_text())
        store = DocumentStore([s["name"] for s in manifest["services"]], cell_deg)
        for entry in manifest["services"]:
            path = data_dir / entry["file"]
            for line in path.read_text().splitlines():
                if line.strip():
                    store.upsert(DeviceDocument.from_json(json.loads(line)))
        return store


def clean_dataset(
    docs: Iterable[DeviceDocument],
) -> tuple[list[DeviceDocument], CleaningReport]:
    """Impute absent rates with the per-service mean (1 decimal); absent
    occupancy stays absent and is only counted (absent means uncrowded)."""
    docs = list(docs)
    report = CleaningReport()
    mean_rate: dict[str, float | None] = {}
    by_service: dict[str, list[float]] = {}
    for doc in docs:
        if doc.rate is not None:
            by_service.setdefault(doc.service_name, []).append(doc.rate)
    for doc in docs:
        if doc.service_name not in mean_rate:
            rates = by_service.get(doc.service_name)
            mean_rate[doc.service_name] = round(sum(rates) / len(rates), 1) if rates else None

    cleaned: list[DeviceDocument] = []
    flagged: set[str] = set()
    for doc in docs:
        if doc.occupancy_factor is None:
            report.occupancy_missing += 1
        if doc.rate is None:
            imputed = mean_rate[doc.service_name]
            if imputed is None:
                flagged.add(doc.service_name)
                cleaned.append(doc)
            else:
                report.rates_imputed += 1
                cleaned.append(doc.with_updates(rate=imputed))
        else:
            cleaned.append(doc)
    report.services_without_rates = sorted(flagged)
    return cleaned, report
