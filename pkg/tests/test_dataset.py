from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotseek.dataset import (
    CatalogError,
    CatalogSpec,
    ServiceCatalog,
    apportion_largest_remainder,
    default_catalog,
    default_weights,
    generate,
    load_dataset,
    load_descriptions,
    write_dataset,
    write_descriptions,
)
from iotseek.model import ServiceDescriptor


# -- catalog --------------------------------------------------------------------


def test_default_catalog_is_500_unique_services(catalog):
    assert len(catalog) == 500
    assert len(set(catalog.names())) == 500
    assert "dog park" in catalog
    svc = catalog.get("  DOG   park ")
    assert svc.name == "dog park"
    assert len(svc.description) > 40  # full paragraphs, not labels


def test_catalog_rejects_duplicates():
    dupe = [
        ServiceDescriptor("a", "cafe", "one"),
        ServiceDescriptor("b", "cafe", "two"),
    ]
    with pytest.raises(CatalogError):
        ServiceCatalog(dupe)


def test_descriptions_file_round_trip(tmp_path, catalog):
    path = tmp_path / "services.txt"
    write_descriptions(path, catalog)
    again = load_descriptions(path)
    assert again.names() == catalog.names()
    assert [s.description for s in again.services] == [
        s.description for s in catalog.services
    ]


def test_load_descriptions_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("cafe\t\n")
    with pytest.raises(CatalogError, match="empty description"):
        load_descriptions(p)
    p.write_text("cafe\tfirst\ncafe\tsecond\n")
    with pytest.raises(CatalogError, match="duplicate"):
        load_descriptions(p)
    p.write_text("\tno name here\n")
    with pytest.raises(CatalogError, match="empty service name"):
        load_descriptions(p)


# -- apportionment -----------------------------------------------------------------


def test_apportionment_exact_when_divisible():
    assert apportion_largest_remainder([1, 1, 1, 1], 8) == [2, 2, 2, 2]


def test_apportionment_sums_and_stays_within_one():
    weights = default_weights(50)
    total = 1234
    counts = apportion_largest_remainder(weights, total)
    assert sum(counts) == total
    wsum = sum(weights)
    for w, c in zip(weights, counts):
        exact = total * w / wsum
        assert abs(c - exact) < 1.0  # each share rounds up or down, never further


def test_apportionment_input_validation():
    with pytest.raises(ValueError):
        apportion_largest_remainder([1, 2], -1)
    with pytest.raises(ValueError):
        apportion_largest_remainder([0.0, 0.0], 5)


@settings(max_examples=80, deadline=None)
@given(
    weights=st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=1, max_size=40),
    total=st.integers(min_value=0, max_value=10_000),
)
def test_apportionment_property(weights, total):
    counts = apportion_largest_remainder(weights, total)
    assert sum(counts) == total
    assert all(c >= 0 for c in counts)
    wsum = sum(weights)
    for w, c in zip(weights, counts):
        exact = total * w / wsum
        assert math.floor(exact) <= c <= math.ceil(exact)


# -- generation --------------------------------------------------------------------


def small_spec(**over) -> CatalogSpec:
    base = dict(n_services=20, n_devices=300, seed=0)
    base.update(over)
    return CatalogSpec(**base)


def test_generate_counts_are_exact(catalog):
    ds = generate(small_spec(), catalog)
    assert len(ds.documents) == 300
    assert len(ds.catalog) == 20
    assert sum(ds.per_service_counts.values()) == 300
    assert all(c >= 1 for c in ds.per_service_counts.values())  # pigeonhole floor


def test_generate_respects_bounds_and_ranges(catalog):
    from iotseek.dataset import TORONTO_REGION

    ds = generate(small_spec(n_devices=500), catalog)
    b = TORONTO_REGION.bounds
    for doc in ds.documents:
        assert b.min_lat <= doc.location.lat <= b.max_lat
        assert b.min_lon <= doc.location.lon <= b.max_lon
        if doc.rate is not None:
            assert 0.0 <= doc.rate <= 5.0
        if doc.occupancy_factor is not None:
            assert 0.0 <= doc.occupancy_factor <= 1.0
        assert doc.updated_at == CatalogSpec().start_time


def test_generate_missing_rates_near_requested(catalog):
    ds = generate(small_spec(n_devices=4000, rating_missing_rate=0.2, occupancy_missing_rate=0.3), catalog)
    n = len(ds.documents)
    rate_missing = sum(1 for d in ds.documents if d.rate is None) / n
    occ_missing = sum(1 for d in ds.documents if d.occupancy_factor is None) / n
    assert rate_missing == pytest.approx(0.2, abs=0.03)
    assert occ_missing == pytest.approx(0.3, abs=0.03)


def test_generate_scenario_extras(catalog):
    names = catalog.names()
    wanted = ["parking garage", "gas station", "walk-in clinic"]
    n_services = max(names.index(w) for w in wanted) + 1
    ds = generate(CatalogSpec(n_services=n_services, n_devices=n_services * 3, seed=1), catalog)
    by_service: dict[str, list] = {}
    for d in ds.documents:
        by_service.setdefault(d.service_name, []).append(d)
    assert all("parking_available" in d.extra for d in by_service["parking garage"])
    assert all(isinstance(d.extra["gas_price"], float) for d in by_service["gas station"])
    assert all(isinstance(d.extra["lineup_count"], int) for d in by_service["walk-in clinic"])
    assert all(d.extra == {} for d in by_service["dog park"])


def test_generate_deterministic(catalog):
    a = generate(small_spec(seed=7), catalog)
    b = generate(small_spec(seed=7), catalog)
    assert a.documents == b.documents
    c = generate(small_spec(seed=8), catalog)
    assert a.documents != c.documents


def test_spec_validation():
    with pytest.raises(ValueError):
        CatalogSpec(n_services=10, n_devices=5)
    with pytest.raises(ValueError):
        CatalogSpec(n_services=3, n_devices=10, weights=[1.0, 2.0])


def test_generate_needs_enough_services(catalog):
    tiny = ServiceCatalog(list(catalog.services[:3]))
    with pytest.raises(ValueError):
        generate(CatalogSpec(n_services=10, n_devices=100), tiny)


def test_write_and_load_dataset_round_trip(tmp_path, catalog):
    ds = generate(small_spec(n_devices=250), catalog)
    write_dataset(tmp_path, ds)
    loaded_catalog, store = load_dataset(tmp_path)
    assert loaded_catalog.names() == ds.catalog.names()
    assert store.document_count() == 250
    # byte-identical regeneration writes byte-identical files
    other = tmp_path.parent / "again"
    write_dataset(other, generate(small_spec(n_devices=250), catalog))
    for path in sorted(tmp_path.iterdir()):
        assert (other / path.name).read_bytes() == path.read_bytes(), path.name
