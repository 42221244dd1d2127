from __future__ import annotations

import threading
from urllib.parse import urlencode
from dataclasses import dataclass, field
from typing import Mapping

from ..errors import ConfigError, KeyNotFound
from ..keys import StoreKey
from .base import Connector


@dataclass(frozen=True)
class RoutingPolicy:
    """Ordered ``(max_size_bytes, connector_id)`` rules; the first rule with
    ``size <= max_size_bytes`` wins, otherwise ``default``."""

    rules: tuple[tuple[int, str], ...] = field(default_factory=tuple)
    default: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple((int(m), str(c)) for m, c in self.rules))
        if not self.default:
            raise ConfigError("routing policy needs a default connector")
        sizes = [m for m, _ in self.rules]
        if any(m < 0 for m in sizes):
            raise ConfigError("rule sizes must be non-negative")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"rule sizes must be strictly increasing, got {sizes}")

    def route(self, payload_size: int) -> str:
        for max_size, connector_id in self.rules:
            if payload_size <= max_size:
                return connector_id
        return self.default

    def connector_ids(self) -> set[str]:
        return {c for _, c in self.rules} | {self.default}


class MultiConnector(Connector):
    """Routes each payload to one sub-connector by size.

    Factories minted through a multi connector name the sub-connector that
    received the bytes, so resolution never needs the router itself.
    """

    kind = "multi"

    def __init__(self, policy: RoutingPolicy, connectors: Mapping[str, Connector]):
        super().__init__()
        missing = policy.connector_ids() - set(connectors)
        if missing:
            raise ConfigError(f"routing policy names unknown connectors {sorted(missing)}")
        self.policy = policy
        self.connectors = dict(connectors)
        self._where: dict[StoreKey, str] = {}
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        rules = ",".join(f"{m}:{c}" for m, c in self.policy.rules)
        query = [("default", self.policy.default), ("rules", rules)]
        query += [(f"c.{cid}", c.url) for cid, c in sorted(self.connectors.items())]
        return "multi://?" + urlencode(query)

    def route(self, payload_size: int) -> str:
        return self.policy.route(payload_size)

    def _locate(self, key: StoreKey) -> list[Connector]:
        cid = self._where.get(key)
        if cid is not None:
            return [self.connectors[cid]]
        return list(self.connectors.values())

    def url_for(self, key: StoreKey) -> str:
        cid = self._where.get(key)
        if cid is None:
            for cid, c in self.connectors.items():
                if c.exists(key):
                    break
            else:
                raise KeyNotFound(str(key))
        return self.connectors[cid].url_for(key)

    def _put(self, key, data):
        cid = self.route(len(data))
        self.connectors[cid].put(key, data)
        with self._lock:
            previous = self._where.get(key)
            self._where[key] = cid
        if previous is not None and previous != cid:
            self.connectors[previous].evict(key)

    def _get(self, key):
        for c in self._locate(key):
            try:
                return c.get(key)
            except KeyNotFound:
                continue
        raise KeyNotFound(str(key))

    def _exists(self, key):
        return any(c.exists(key) for c in self._locate(key))

    def _evict(self, key):
        for c in self._locate(key):
            c.evict(key)
        with self._lock:
            self._where.pop(key, None)

    def _keys(self, namespace):
        keys: set[StoreKey] = set()
        for c in self.connectors.values():
            keys.update(c.keys(namespace))
        return list(keys)

    def _close(self):
        for c in self.connectors.values():
            c.close()
