"""Service catalog and synthetic dataset generation.

The bundled catalog of 500 service descriptions stands in for a scraped
city dataset; ``load_descriptions`` accepts a user-supplied corpus in the
same format (one ``name<TAB>paragraph`` record per line). Generation is a
pure function of its ``CatalogSpec``: the same parameters always produce
byte-identical output files.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geo import BoundingBox, GeoPoint
from .model import DeviceDocument, Region, ServiceDescriptor, canonical_service_name

TORONTO_REGION = Region(
    region_id="toronto",
    name="Toronto",
    bounds=BoundingBox(43.58, -79.64, 43.86, -79.12),
)

# Real-time fields generated for services that carry them.
SCENARIO_EXTRA_FIELDS = {
    "parking garage": "parking_available",
    "gas station": "gas_price",
    "walk-in clinic": "lineup_count",
}


class CatalogError(ValueError):
    pass


@dataclass
class ServiceCatalog:
    """Ordered catalog of service descriptors, unique by canonical name."""

    services: list[ServiceDescriptor]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for svc in self.services:
            if svc.name in seen:
                raise CatalogError(f"duplicate service name {svc.name!r}")
            seen.add(svc.name)
        self._by_name = {s.name: s for s in self.services}

    def __len__(self) -> int:
        return len(self.services)

    def __contains__(self, name: str) -> bool:
        return canonical_service_name(name) in self._by_name

    def names(self) -> list[str]:
        return [s.name for s in self.services]

    def get(self, name: str) -> ServiceDescriptor:
        return self._by_name[canonical_service_name(name)]


def load_descriptions(path: str | Path) -> ServiceCatalog:
    """Read a catalog file: one ``name<TAB>description`` record per line."""
    services: list[ServiceDescriptor] = []
    seen: set[str] = set()
    duplicates: list[str] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        name_raw, _, description = line.partition("\t")
        name = canonical_service_name(name_raw)
        if not name:
            raise CatalogError(f"line {lineno}: empty service name")
        if not description.strip():
            raise CatalogError(f"line {lineno}: empty description for {name!r}")
        if name in seen:
            duplicates.append(name)
            continue
        seen.add(name)
        services.append(
            ServiceDescriptor(
                service_id=f"svc-{len(services):03d}",
                name=name,
                description=description.strip(),
            )
        )
    if duplicates:
        raise CatalogError(f"duplicate service names: {sorted(set(duplicates))}")
    return ServiceCatalog(services)


def write_descriptions(path: str | Path, catalog: ServiceCatalog) -> None:
    lines = [f"{s.name}\t{s.description}" for s in catalog.services]
    Path(path).write_text("\n".join(lines) + "\n")


def default_catalog() -> ServiceCatalog:
    """The bundled 500-service description corpus."""
    ref = importlib.resources.files("iotseek.data") / "service_descriptions.txt"
    with importlib.resources.as_file(ref) as path:
        return load_descriptions(path)


# -- synthetic generation ------------------------------------------------------


@dataclass(frozen=True)
class CatalogSpec:
    """Parameters of one synthetic dataset build."""

    n_services: int = 500
    n_devices: int = 37_033
    region: Region = TORONTO_REGION
    weights: Sequence[float] | None = None  # per-service device-count weights
    seed: int = 0
    rating_missing_rate: float = 0.05
    occupancy_missing_rate: float = 0.10
    start_time: float = 1_735_689_600.0  # fixed epoch so output is reproducible

    def __post_init__(self) -> None:
        if self.n_devices < self.n_services:
            raise ValueError("n_devices must be >= n_services (every service gets a device)")
        if self.weights is not None and len(self.weights) != self.n_services:
            raise ValueError("weights length must equal n_services")


@dataclass
class GeneratedDataset:
    catalog: ServiceCatalog
    documents: list[DeviceDocument]
    per_service_counts: dict[str, int] = field(default_factory=dict)


def apportion_largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integer apportionment of ``total`` across ``weights``; each count is
    within 1 of its exact fractional share."""
    if total < 0:
        raise ValueError("total must be nonnegative")
    wsum = float(sum(weights))
    if wsum <= 0:
        raise ValueError("weights must have positive sum")
    exact = [total * w / wsum for w in weights]
    counts = [int(math.floor(x)) for x in exact]
    remainder = total - sum(counts)
    by_frac = sorted(
        range(len(weights)), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in by_frac[:remainder]:
        counts[i] += 1
    return counts


def default_weights(n: int, exponent: float = 0.8) -> list[float]:
    """Long-tail weights: a few services own many devices, most own few."""
    return [1.0 / (i + 1) ** exponent for i in range(n)]


_STREET_NAMES = [
    "King St", "Queen St", "Dundas St", "Bloor St", "College St", "Yonge St",
    "Bathurst St", "Spadina Ave", "St Clair Ave", "Eglinton Ave", "Lawrence Ave",
    "Finch Ave", "Sheppard Ave", "Danforth Ave", "Gerrard St", "Ossington Ave",
]


def _occupancy_curve(rng: np.random.Generator, hour: float) -> float:
    """Sample a daily two-peak crowdedness curve at the given hour."""
    morning = rng.uniform(7.0, 10.0)
    evening = rng.uniform(16.0, 20.0)
    amp_m = rng.uniform(0.2, 0.6)
    amp_e = rng.uniform(0.3, 0.7)
    base = rng.uniform(0.05, 0.2)
    value = (
        base
        + amp_m * math.exp(-((hour - morning) ** 2) / 4.5)
        + amp_e * math.exp(-((hour - evening) ** 2) / 6.0)
        + rng.normal(0.0, 0.05)
    )
    return min(1.0, max(0.0, value))


def _scenario_extra(service: str, rng: np.random.Generator) -> dict:
    fld = SCENARIO_EXTRA_FIELDS.get(service)
    if fld == "parking_available":
        return {fld: bool(rng.random() < 0.5)}
    if fld == "gas_price":
        return {fld: round(float(rng.normal(1.65, 0.08)), 2)}
    if fld == "lineup_count":
        return {fld: int(rng.poisson(5))}
    return {}


def generate(spec: CatalogSpec, catalog: ServiceCatalog | None = None) -> GeneratedDataset:
    """Produce a catalog plus synthetic device documents, deterministically."""
    if catalog is None:
        catalog = default_catalog()
    if len(catalog) < spec.n_services:
        raise ValueError(
            f"catalog has {len(catalog)} services, spec wants {spec.n_services}"
        )
    services = catalog.services[: spec.n_services]
    weights = list(spec.weights) if spec.weights is not None else default_weights(spec.n_services)
    counts = [1 + c for c in apportion_largest_remainder(weights, spec.n_devices - spec.n_services)]

    rng = np.random.default_rng(spec.seed)
    bounds = spec.region.bounds
    documents: list[DeviceDocument] = []
    per_service: dict[str, int] = {}
    for s_idx, (svc, count) in enumerate(zip(services, counts)):
        per_service[svc.name] = count
        title = svc.name.title()
        for d_idx in range(count):
            lat = float(rng.uniform(bounds.min_lat, bounds.max_lat))
            lon = float(rng.uniform(bounds.min_lon, bounds.max_lon))
            rate: float | None = round(float(np.clip(rng.normal(4.1, 0.6), 0.0, 5.0)), 1)
            if rng.random() < spec.rating_missing_rate:
                rate = None
            occupancy: float | None = round(_occupancy_curve(rng, hour=12.0), 3)
            if rng.random() < spec.occupancy_missing_rate:
                occupancy = None
            street = _STREET_NAMES[int(rng.integers(0, len(_STREET_NAMES)))]
            number = int(rng.integers(1, 4000))
            documents.append(
                DeviceDocument(
                    node_id=f"{s_idx:03d}-{d_idx:05d}",
                    service_name=svc.name,
                    display_name=f"{title} {d_idx + 1}",
                    address=f"{number} {street}, {spec.region.name}, ON, Canada",
                    location=GeoPoint(lat, lon),
                    rate=rate,
                    occupancy_factor=occupancy,
                    extra=_scenario_extra(svc.name, rng),
                    updated_at=spec.start_time,
                )
            )
    trimmed = ServiceCatalog(list(services))
    return GeneratedDataset(catalog=trimmed, documents=documents, per_service_counts=per_service)


def write_dataset(out_dir: str | Path, dataset: GeneratedDataset) -> None:
    """Write the docstore load format: descriptions file + manifest + NDJSON."""
    from .store import DocumentStore

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_descriptions(out_dir / "service_descriptions.txt", dataset.catalog)
    store = DocumentStore(dataset.catalog.names())
    for doc in dataset.documents:
        store.upsert(doc)
    store.save(out_dir)


def load_dataset(data_dir: str | Path):
    """Load (catalog, store) from a directory written by ``write_dataset``."""
    from .store import DocumentStore

    data_dir = Path(data_dir)
    catalog = load_descriptions(data_dir / "service_descriptions.txt")
    store = DocumentStore.load(data_dir)
    return catalog, store


def documents_from(docs: Iterable[DeviceDocument], catalog: ServiceCatalog):
    from .store import DocumentStore

    store = DocumentStore(catalog.names())
    for doc in docs:
        store.upsert(doc)
    return store
