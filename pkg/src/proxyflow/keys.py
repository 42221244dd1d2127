from __future__ import annotations

import re
import uuid
from dataclasses import dataclass

_NAMESPACE_RE = re.compile(r"^[A-Za-z0-9_\-][A-Za-z0-9_.\-]{0,127}$")
_ID_RE = re.compile(r"^[0-9a-f]{32}$")


@dataclass(frozen=True, order=True)
class StoreKey:
    """Address of one stored payload: a namespace plus a random 128-bit id
    rendered as 32 lowercase hex characters."""

    namespace: str
    id: str

    def __post_init__(self):
        if not _NAMESPACE_RE.match(self.namespace):
            raise ValueError(f"invalid key namespace {self.namespace!r}")
        if not _ID_RE.match(self.id):
            raise ValueError(f"invalid key id {self.id!r}")

    @classmethod
    def new(cls, namespace: str) -> "StoreKey":
        return cls(namespace, uuid.uuid4().hex)

    @classmethod
    def parse(cls, text: str) -> "StoreKey":
        namespace, sep, id_ = text.partition("/")
        if not sep:
            raise ValueError(f"malformed store key {text!r}")
        return cls(namespace, id_)

    def __str__(self):
        return f"{self.namespace}/{self.id}"
