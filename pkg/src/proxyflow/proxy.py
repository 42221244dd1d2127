"""Lazy proxies: handles that fetch and decode their target on first use.

Proxy wire format::

    offset  size  field
    0       1     version (1)
    1       4     envelope length, u32 big-endian
    5       n     generic-codec list:
                  [connector_url, namespace, id, serializer_id,
                   evict_on_resolve, type_tag, content_hash, size_bytes]

The envelope never contains target bytes, so its length does not depend on
the size of the target.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from typing import Any

from . import serial
from .errors import DecodeError, EncodeError
from .keys import StoreKey

WIRE_VERSION = 1
_U32 = struct.Struct(">I")


@dataclass(frozen=True)
class ProxyMetadata:
    """Read-only facts about the target, cached so introspection (hashing,
    type checks, size policies) never triggers a fetch."""

    type_tag: str
    content_hash: bytes
    size_bytes: int

    @classmethod
    def of_payload(cls, payload, type_tag: str) -> "ProxyMetadata":
        return cls(type_tag, serial.digest(payload), len(payload))


@dataclass(frozen=True)
class Factory:
    """Self-contained recipe for fetching a target: which connector to open,
    which key to read and which codec decodes it. Holds no live handles."""

    connector_url: str
    key: StoreKey
    serializer_id: int
    evict_on_resolve: bool = False

    def __call__(self) -> Any:
        from .connectors import connector_from_url

        connector = connector_from_url(self.connector_url)
        payload = connector.get(self.key)
        obj = serial.default_registry().loads(payload, expected_id=self.serializer_id)
        if self.evict_on_resolve:
            connector.evict(self.key)
        return obj


_UNSET = object()


class Proxy:
    """Stands in for an object held in a store.

    Call :meth:`resolve` to get the target. The factory runs at most once
    per proxy instance, even when many threads resolve at the same time;
    the losers wait for the winner. A failed resolve leaves the proxy
    unresolved so it can be retried.
    """

    __slots__ = ("factory", "metadata", "_lock", "_target")

    def __init__(self, factory: Factory, metadata: ProxyMetadata):
        self.factory = factory
        self.metadata = metadata
        self._lock = threading.Lock()
        self._target = _UNSET

    @property
    def is_resolved(self) -> bool:
        return self._target is not _UNSET

    @property
    def key(self) -> StoreKey:
        return self.factory.key

    def resolve(self) -> Any:
        target = self._target
        if target is not _UNSET:
            return target
        with self._lock:
            if self._target is _UNSET:
                self._target = self.factory()
            return self._target

    def serialize(self) -> bytes:
        f, m = self.factory, self.metadata
        try:
            body = serial.encode_generic([
                f.connector_url, f.key.namespace, f.key.id, f.serializer_id,
                f.evict_on_resolve, m.type_tag, m.content_hash, m.size_bytes,
            ])
        except EncodeError as exc:
            raise EncodeError(f"cannot serialize proxy: {exc}") from exc
        return bytes((WIRE_VERSION,)) + _U32.pack(len(body)) + body

    def __reduce__(self):
        return deserialize_proxy, (self.serialize(),)

    def __repr__(self):
        state = "resolved" if self.is_resolved else "unresolved"
        return (f"<Proxy {self.factory.key} {self.metadata.type_tag} "
                f"{self.metadata.size_bytes}B {state}>")


def deserialize_proxy(data) -> Proxy:
    """Rebuild an unresolved proxy from :meth:`Proxy.serialize` output."""
    mv = memoryview(data).cast("B")
    if len(mv) < 5:
        raise DecodeError("proxy envelope too short")
    if mv[0] != WIRE_VERSION:
        raise DecodeError(f"unsupported proxy wire version {mv[0]}")
    (n,) = _U32.unpack_from(mv, 1)
    if 5 + n != len(mv):
        raise DecodeError("proxy envelope length mismatch")
    fields = serial.decode_generic(mv[5:])
    if not isinstance(fields, list) or len(fields) != 8:
        raise DecodeError("proxy envelope has the wrong shape")
    url, namespace, id_, sid, evict, tag, digest, size = fields
    try:
        if not (isinstance(url, str) and isinstance(sid, int) and isinstance(evict, bool)
                and isinstance(tag, str) and isinstance(digest, bytes) and len(digest) == 32
                and isinstance(size, int) and size >= 0):
            raise ValueError("field types")
        key = StoreKey(namespace, id_)
    except (TypeError, ValueError) as exc:
        raise DecodeError(f"invalid proxy envelope: {exc}") from exc
    return Proxy(Factory(url, key, sid, evict), ProxyMetadata(tag, digest, size))


def resolve(p: Proxy) -> Any:
    return p.resolve()


def metadata(p: Proxy) -> ProxyMetadata:
    return p.metadata


def is_resolved(p: Proxy) -> bool:
    return p.is_resolved


def serialize_proxy(p: Proxy) -> bytes:
    return p.serialize()


def extract(obj: Any) -> Any:
    """Resolve ``obj`` if it is a proxy (or wraps one), otherwise return it."""
    if isinstance(obj, Proxy):
        return obj.resolve()
    inner = getattr(obj, "proxy", None)
    if isinstance(inner, Proxy):
        return inner.resolve()
    return obj
