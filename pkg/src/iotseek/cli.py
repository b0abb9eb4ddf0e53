"""Command line entry points.

Every command funnels through ``load_config`` so flags, IOTSEEK_* env
vars, and a JSON config file compose the same way everywhere.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from .config import AppConfig, load_config
from .dataset import CatalogSpec, default_catalog, generate, load_dataset, write_dataset
from .embedding import EmbeddingPipeline, create_provider
from .geo import GeoPoint
from .hnsw import HnswIndex, IndexParams
from .ingest import StreamSpec, ingest_stream, simulate_messages
from .retrieval import build_catalog_index


def _config(path: str | None, **overrides) -> AppConfig:
    try:
        return load_config(path, overrides=overrides)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="JSON config file; flags beat env vars beat this file.",
)


@click.group()
def main() -> None:
    """Real-time device search: dataset, index, server, eval tooling."""


@main.command()
@config_option
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--data-dir", default=None, help="Dataset directory to serve.")
@click.option("--index-path", default=None, help="Prebuilt vector index snapshot.")
@click.option(
    "--provider-mode", default=None,
    type=click.Choice(["mock", "replay", "live", "record"]),
)
@click.option("--fixtures-dir", default=None)
@click.option("--routing-url", default=None)
@click.option("--maps-url", default=None)
@click.option("--web-url", default=None)
@click.option("--hop-budget", type=int, default=None)
def serve(config_path, **overrides) -> None:
    """Run the HTTP server."""
    from .server import serve as run_server

    run_server(_config(config_path, **overrides))


@main.group()
def dataset() -> None:
    """Generate and inspect synthetic datasets."""


@dataset.command("generate")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--services", default=500, show_default=True)
@click.option("--devices", default=37_033, show_default=True)
@click.option("--seed", default=0, show_default=True)
def dataset_generate(out_dir: str, services: int, devices: int, seed: int) -> None:
    """Write a reproducible dataset (descriptions + per-service documents)."""
    t0 = time.perf_counter()
    spec = CatalogSpec(n_services=services, n_devices=devices, seed=seed)
    ds = generate(spec)
    write_dataset(out_dir, ds)
    elapsed = time.perf_counter() - t0
    click.echo(
        f"wrote {len(ds.catalog)} services / {len(ds.documents)} documents "
        f"to {out_dir} in {elapsed:.2f}s"
    )


@dataset.command("load")
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
def dataset_load(data_dir: str) -> None:
    """Load a dataset directory and print a summary."""
    catalog, store = load_dataset(data_dir)
    click.echo(f"services: {len(catalog)}")
    click.echo(f"documents: {store.document_count()}")
    click.echo(f"content_hash: {store.content_hash()}")


@main.group()
def index() -> None:
    """Build and query the service vector index."""


def _pipeline(cfg: AppConfig) -> EmbeddingPipeline:
    return EmbeddingPipeline(create_provider(cfg.embedding_provider))


def _index_params(cfg: AppConfig) -> IndexParams:
    return IndexParams(
        M=cfg.hnsw_m,
        ef_construction=cfg.hnsw_ef_construction,
        ef_search=cfg.hnsw_ef_search,
        seed=cfg.hnsw_seed,
    )


@index.command("build")
@config_option
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data-dir", default=None)
def index_build(config_path, out_path: str, data_dir) -> None:
    """Embed every service description and snapshot the index."""
    cfg = _config(config_path, data_dir=data_dir)
    catalog = load_dataset(cfg.data_dir)[0] if cfg.data_dir else default_catalog()
    t0 = time.perf_counter()
    idx = build_catalog_index(catalog, _pipeline(cfg), _index_params(cfg))
    idx.save(out_path)
    click.echo(f"indexed {len(idx)} services to {out_path} in {time.perf_counter()-t0:.2f}s")


@index.command("search")
@config_option
@click.argument("query")
@click.option("-k", default=3, show_default=True)
@click.option("--index-path", default=None)
@click.option("--data-dir", default=None)
def index_search(config_path, query: str, k: int, index_path, data_dir) -> None:
    """Rank services against a query; prints cosine similarity and name."""
    cfg = _config(config_path, index_path=index_path, data_dir=data_dir)
    pipeline = _pipeline(cfg)
    if cfg.index_path:
        idx = HnswIndex.load(cfg.index_path)
    else:
        catalog = load_dataset(cfg.data_dir)[0] if cfg.data_dir else default_catalog()
        idx = build_catalog_index(catalog, pipeline, _index_params(cfg))
    for name, score in idx.search(pipeline.embed_text(query), k=k):
        click.echo(f"{score:.4f}  {name}")


@main.group()
def eval() -> None:
    """Retrieval quality and latency measurements."""


@eval.command("intents")
@config_option
@click.option("--cases", "cases_path", default=None, type=click.Path(exists=True))
@click.option("--as-json", is_flag=True, default=False)
def eval_intents(config_path, cases_path, as_json: bool) -> None:
    """Route the bundled intent set and report top-1/top-k ranks."""
    from .evaluation import check_bookkeeping, load_intent_cases, run_intent_eval

    cfg = _config(config_path)
    pipeline = _pipeline(cfg)
    idx = build_catalog_index(default_catalog(), pipeline, _index_params(cfg))
    cases = load_intent_cases(cases_path)

    def route(query: str, k: int):
        return idx.search(pipeline.embed_text(query), k=k)

    report = run_intent_eval(route, cases)
    problems = check_bookkeeping(report, cases)
    if as_json:
        click.echo(json.dumps(report.to_json(), indent=2))
    else:
        click.echo(report.format_table())
    if problems:
        for p in problems:
            click.echo(f"bookkeeping: {p}", err=True)
        sys.exit(1)


@eval.command("latency")
@config_option
@click.option("--n", default=50, show_default=True, help="Queries per batch.")
@click.option("--repeats", default=1, show_default=True)
def eval_latency(config_path, n: int, repeats: int) -> None:
    """Time end-to-end query handling against an in-process engine."""
    from .evaluation import run_latency_probe
    from .server import build_state

    cfg = _config(config_path)
    state = build_state(cfg)
    origin = state.regions[0].bounds.centroid()
    names = state.catalog.names()
    queries = [f"find me a {names[i % len(names)]}" for i in range(n)]
    stats = run_latency_probe(
        lambda q: state.engine.run_query(q, origin), queries, repeats=repeats
    )
    click.echo(json.dumps(stats.to_json(), indent=2))


@main.command()
@config_option
@click.option("--data-dir", default=None)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False),
              help="Write NDJSON messages here instead of applying them.")
@click.option("--n", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
def simulate(config_path, data_dir, out_path, n: int, seed: int) -> None:
    """Replay a deterministic synthetic message stream against a dataset."""
    from .server import build_state

    cfg = _config(config_path, data_dir=data_dir)
    state = build_state(cfg)
    messages = simulate_messages(state.store, StreamSpec(n_messages=n, seed=seed))
    if out_path:
        with open(out_path, "w") as f:
            for m in messages:
                f.write(json.dumps(m.to_json()) + "\n")
        click.echo(f"wrote {len(messages)} messages to {out_path}")
        return
    report = ingest_stream(state.store, messages)
    click.echo(json.dumps(report.to_json(), indent=2))


if __name__ == "__main__":
    main()
