from __future__ import annotations

import abc
import threading
from collections import Counter

from ..errors import ConnectorUnavailable
from ..keys import StoreKey


class Connector(abc.ABC):
    """Byte-level storage interface beneath a :class:`~proxyflow.store.Store`.

    Subclasses implement the underscored hooks; the public methods enforce
    the open/closed state and keep per-operation counters that tests use to
    observe how often a key was fetched.
    """

    kind: str = "abstract"

    def __init__(self):
        self._closed = False
        self._stats_lock = threading.Lock()
        self.op_counts: Counter = Counter()
        self.key_gets: Counter = Counter()

    @property
    @abc.abstractmethod
    def url(self) -> str:
        """Self-contained address a factory uses to reopen this medium."""

    def url_for(self, key: StoreKey) -> str:
        return self.url

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self) -> None:
        if self._closed:
            raise ConnectorUnavailable(f"{self.kind} connector is closed")

    def _count(self, op: str, key: StoreKey | None = None) -> None:
        with self._stats_lock:
            self.op_counts[op] += 1
            if key is not None:
                self.key_gets[key] += 1

    def put(self, key: StoreKey, data: bytes) -> None:
        self._check_open()
        self._count("put")
        self._put(key, data)

    def get(self, key: StoreKey) -> bytes | memoryview:
        """Stored bytes for ``key`` (possibly a read-only memoryview);
        raises KeyNotFound if absent."""
        self._check_open()
        self._count("get", key)
        return self._get(key)

    def exists(self, key: StoreKey) -> bool:
        self._check_open()
        self._count("exists")
        return self._exists(key)

    def evict(self, key: StoreKey) -> None:
        """Remove ``key``; evicting an absent key is a no-op."""
        self._check_open()
        self._count("evict")
        self._evict(key)

    def keys(self, namespace: str | None = None) -> list[StoreKey]:
        """Census of stored keys, optionally restricted to one namespace."""
        self._check_open()
        return sorted(self._keys(namespace))

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._close()

    def _close(self) -> None:
        pass

    @abc.abstractmethod
    def _put(self, key: StoreKey, data: bytes) -> None: ...

    @abc.abstractmethod
    def _get(self, key: StoreKey) -> bytes: ...

    @abc.abstractmethod
    def _exists(self, key: StoreKey) -> bool: ...

    @abc.abstractmethod
    def _evict(self, key: StoreKey) -> None: ...

    @abc.abstractmethod
    def _keys(self, namespace: str | None) -> list[StoreKey]: ...

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        state = "closed" if self._closed else "open"
        return f"<{type(self).__name__} {self.url} {state}>"
