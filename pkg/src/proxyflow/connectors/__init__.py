"""Byte-level storage connectors."""

from .base import Connector
from .config import ConnectorConfig, connector_from_url, register_connector
from .filesystem import FilesystemConnector
from .kv import KVServer, RemoteKVConnector
from .memory import MemoryConnector
from .multi import MultiConnector, RoutingPolicy

__all__ = [
    "Connector",
    "ConnectorConfig",
    "FilesystemConnector",
    "KVServer",
    "MemoryConnector",
    "MultiConnector",
    "RemoteKVConnector",
    "RoutingPolicy",
    "connector_from_url",
    "register_connector",
]
