"""Real-time service search over live IoT device documents."""

from .agents import AgentEngine, QueryResult, SessionMemory
from .config import AppConfig, load_config
from .dataset import CatalogSpec, ServiceCatalog, default_catalog, generate
from .embedding import EmbeddingPipeline, create_provider
from .geo import GeoPoint, haversine_m
from .hnsw import HnswIndex, IndexParams
from .ingest import DeviceMessage, apply_message, ingest_stream
from .model import DeviceDocument, Region, Topic
from .retrieval import IotSearch, Preferences, SearchConfig, extract_preferences
from .store import DocumentStore, GeoQuery

__version__ = "0.1.0"

__all__ = [
    "AgentEngine",
    "AppConfig",
    "CatalogSpec",
    "DeviceDocument",
    "DeviceMessage",
    "DocumentStore",
    "EmbeddingPipeline",
    "GeoPoint",
    "GeoQuery",
    "HnswIndex",
    "IndexParams",
    "IotSearch",
    "Preferences",
    "QueryResult",
    "Region",
    "SearchConfig",
    "ServiceCatalog",
    "SessionMemory",
    "Topic",
    "apply_message",
    "create_provider",
    "default_catalog",
    "extract_preferences",
    "generate",
    "haversine_m",
    "ingest_stream",
    "load_config",
    "__version__",
]
