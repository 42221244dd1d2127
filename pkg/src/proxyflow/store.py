from __future__ import annotations

import threading
from typing import Any

from . import serial
from .connectors import Connector, register_connector
from .keys import StoreKey
from .proxy import Factory, Proxy, ProxyMetadata


class Store:
    """Serializes objects, places the bytes through a connector and mints
    proxies that resolve through the same connector configuration.

    Keys minted by a store live in the namespace ``name``::

        with Store("example", MemoryConnector()) as store:
            p = store.proxy([1, 2, 3])
            assert sum(p.resolve()) == 6
    """

    def __init__(self, name: str, connector: Connector,
                 registry: serial.SerializerRegistry | None = None):
        StoreKey(name, "0" * 32)  # validates the namespace
        self.name = name
        self.connector = connector
        self.registry = registry or serial.default_registry()
        self._metrics_lock = threading.Lock()
        self.metrics = {"puts": 0, "gets": 0, "bytes_in": 0, "bytes_out": 0}
        register_connector(connector)

    def _bump(self, **deltas: int) -> None:
        with self._metrics_lock:
            for name, n in deltas.items():
                self.metrics[name] += n

    def encode(self, obj: Any) -> serial.Chunks:
        return self.registry.dumps_parts(obj)

    def put_payload(self, payload) -> StoreKey:
        """Store an already framed payload under a fresh key."""
        key = StoreKey.new(self.name)
        self.connector.put(key, payload)
        self._bump(puts=1, bytes_out=len(payload))
        return key

    def put(self, obj: Any) -> StoreKey:
        return self.put_payload(self.encode(obj))

    def get(self, key: StoreKey) -> Any:
        payload = self.connector.get(key)
        self._bump(gets=1, bytes_in=len(payload))
        return self.registry.loads(payload)

    def exists(self, key: StoreKey) -> bool:
        return self.connector.exists(key)

    def evict(self, key: StoreKey) -> None:
        self.connector.evict(key)

    def keys(self) -> list[StoreKey]:
        """Census of keys this store's namespace currently holds."""
        return self.connector.keys(self.name)

    def proxy_from_payload(self, payload, type_tag: str,
                           evict_on_resolve: bool = False) -> Proxy:
        key = self.put_payload(payload)
        factory = Factory(
            self.connector.url_for(key), key,
            serial.peek_serializer_id(payload), evict_on_resolve,
        )
        return Proxy(factory, ProxyMetadata.of_payload(payload, type_tag))

    def proxy(self, obj: Any, evict_on_resolve: bool = False) -> Proxy:
        return self.proxy_from_payload(self.encode(obj), serial.type_tag(obj), evict_on_resolve)

    def close(self) -> None:
        self.connector.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"Store({self.name!r}, {self.connector!r})"


def store_put(s: Store, obj: Any) -> StoreKey:
    return s.put(obj)


def store_proxy(s: Store, obj: Any, evict_on_resolve: bool = False) -> Proxy:
    return s.proxy(obj, evict_on_resolve)
