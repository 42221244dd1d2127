"""Pass-by-proxy data flow for a centralized-scheduler task engine."""

from .connectors import (
    ConnectorConfig, FilesystemConnector, KVServer, MemoryConnector, MultiConnector,
    RemoteKVConnector, RoutingPolicy,
)
from .errors import (
    BorrowAfterRelease, ConnectorUnavailable, DecodeError, EncodeError, KeyNotFound,
    StorageFull, TaskError, UnknownFunction,
)
from .keys import StoreKey
from .proxy import (
    Factory, Proxy, ProxyMetadata, deserialize_proxy, extract, is_resolved, metadata,
    resolve, serialize_proxy,
)
from .store import Store, store_proxy, store_put

__version__ = "0.1.0"
