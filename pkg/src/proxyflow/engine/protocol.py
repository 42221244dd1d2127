"""Engine wire protocol and the task data model.

Each message is one length-prefixed frame whose payload is a 1-byte kind
followed by a generic-codec map body. Map fields by kind:

SUBMIT    client -> scheduler  id, f (function id), a (arg envelopes),
                               p (pure), r (result policy or None), key
DISPATCH  scheduler -> worker  id, f, a, r
RESULT    worker -> scheduler  id, ok, v (envelope or None), e (error), w, x
          scheduler -> client  id, ok, v, e, w, x, d (queue ns), key,
                               sb (scheduler bytes so far), n (attempts)
STATS     client <-> scheduler request {} / reply with counters
REGISTER  first frame of every connection: role, and for workers id, slots
SHUTDOWN  client -> scheduler -> workers
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

from .. import serial
from ..errors import DecodeError, ProtocolError
from ..proxy import Proxy, deserialize_proxy

SUBMIT, DISPATCH, RESULT, STATS, REGISTER, SHUTDOWN = 1, 2, 3, 4, 5, 6
KINDS = {SUBMIT: "SUBMIT", DISPATCH: "DISPATCH", RESULT: "RESULT",
         STATS: "STATS", REGISTER: "REGISTER", SHUTDOWN: "SHUTDOWN"}

INLINE, PROXY = 0, 1
MAX_ATTEMPTS = 2


def encode_message(kind: int, body: dict) -> list:
    """Message as a list of buffers for a gather write: kind byte, then
    the generic-codec body."""
    return serial.encode_generic_parts(body, bytes((kind,)))


def decode_message(payload) -> tuple[int, dict]:
    mv = memoryview(payload)
    if len(mv) < 2 or mv[0] not in KINDS:
        raise ProtocolError("unknown message kind")
    try:
        body = serial.decode_generic(mv[1:])
    except DecodeError as exc:
        raise ProtocolError(f"undecodable {KINDS[mv[0]]} body: {exc}") from exc
    if not isinstance(body, dict):
        raise ProtocolError("message body must be a map")
    return mv[0], body


@dataclass(frozen=True)
class ArgEnvelope:
    """One task argument or result on the wire: either the full framed
    payload (inline) or a serialized proxy standing in for it."""

    kind: int
    data: bytes | serial.Chunks
    declared_size: int
    owned: bool = False

    @classmethod
    def inline_payload(cls, payload) -> "ArgEnvelope":
        return cls(INLINE, payload, len(payload))

    @classmethod
    def inline(cls, obj: Any) -> "ArgEnvelope":
        return cls.inline_payload(serial.dumps_parts(obj))

    @classmethod
    def from_proxy(cls, proxy: Proxy, owned: bool = False) -> "ArgEnvelope":
        return cls(PROXY, proxy.serialize(), proxy.metadata.size_bytes, owned)

    @property
    def is_proxy(self) -> bool:
        return self.kind == PROXY

    @property
    def serializer_id(self) -> int:
        if self.kind == INLINE:
            return serial.peek_serializer_id(self.data)
        return self.proxy().factory.serializer_id

    def proxy(self) -> Proxy:
        return deserialize_proxy(self.data)

    def digest(self) -> bytes:
        """SHA-256 of the argument's stored payload; for proxies this is the
        cached content hash, so nothing is fetched."""
        if self.kind == INLINE:
            return serial.digest(self.data)
        return self.proxy().metadata.content_hash

    def open(self) -> Any:
        """Decoded value for inline envelopes, an unresolved Proxy otherwise."""
        if self.kind == INLINE:
            return serial.loads(self.data)
        return self.proxy()

    def to_wire(self) -> dict:
        return {"k": self.kind, "d": self.data, "n": self.declared_size, "o": self.owned}

    @classmethod
    def from_wire(cls, wire: Any) -> "ArgEnvelope":
        try:
            kind, data, size = wire["k"], wire["d"], wire["n"]
            owned = bool(wire.get("o", False))
        except (TypeError, KeyError) as exc:
            raise ProtocolError(f"malformed argument envelope: {exc}") from None
        if kind not in (INLINE, PROXY) or not isinstance(data, bytes):
            raise ProtocolError("malformed argument envelope")
        return cls(kind, data, size, owned)


@dataclass(frozen=True)
class TaskKey:
    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self):
        return self.hex[:16]


@dataclass
class TaskSpec:
    function_id: str
    args: list[ArgEnvelope]
    pure: bool = False
    result_policy: dict | None = None

    def wire_args(self) -> list[dict]:
        return [a.to_wire() for a in self.args]


def key_from_digests(function_id: str, digests: list[bytes]) -> TaskKey:
    canonical = serial.encode_generic(["proxyflow.task/1", function_id, digests])
    return TaskKey(hashlib.sha256(canonical).digest())


def task_key(spec: TaskSpec) -> TaskKey:
    """Deterministic key of ``spec``: SHA-256 over the function id and the
    content digests of its arguments. Never resolves a proxy argument."""
    return key_from_digests(spec.function_id, [a.digest() for a in spec.args])


@dataclass(frozen=True)
class Timings:
    dispatch_ns: int
    exec_ns: int
    total_ns: int


@dataclass(frozen=True)
class TaskResult:
    key: TaskKey | None
    ok: bool
    value: ArgEnvelope | None
    error: str | None
    worker_id: str
    timings: Timings
    attempts: int = 1
    scheduler_bytes: int = 0


@dataclass
class SchedulerStats:
    tasks_dispatched: int = 0
    bytes_received: int = 0
    bytes_sent: int = 0
    cache_hits: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def bytes_total(self) -> int:
        return self.bytes_received + self.bytes_sent

    def to_wire(self) -> dict:
        return {"tasks_dispatched": self.tasks_dispatched,
                "bytes_received": self.bytes_received,
                "bytes_sent": self.bytes_sent,
                "cache_hits": self.cache_hits,
                **self.extra}

    @classmethod
    def from_wire(cls, body: dict) -> "SchedulerStats":
        body = dict(body)
        return cls(body.pop("tasks_dispatched", 0), body.pop("bytes_received", 0),
                   body.pop("bytes_sent", 0), body.pop("cache_hits", 0), body)

    def __sub__(self, other: "SchedulerStats") -> "SchedulerStats":
        return SchedulerStats(
            self.tasks_dispatched - other.tasks_dispatched,
            self.bytes_received - other.bytes_received,
            self.bytes_sent - other.bytes_sent,
            self.cache_hits - other.cache_hits,
        )
