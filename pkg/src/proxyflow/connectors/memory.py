from __future__ import annotations

import threading

from ..errors import KeyNotFound, StorageFull
from ..keys import StoreKey
from .base import Connector


class _Segment:
    def __init__(self, capacity_bytes: int | None):
        self.lock = threading.Lock()
        self.data: dict[StoreKey, bytes] = {}
        self.used = 0
        self.capacity_bytes = capacity_bytes


_segments: dict[str, _Segment] = {}
_segments_lock = threading.Lock()


class MemoryConnector(Connector):
    """In-process storage. Connectors naming the same segment share data
    within one process; closing a connector drops its segment, so nothing
    survives a close/reopen cycle."""

    kind = "memory"

    def __init__(self, segment: str = "default", capacity_bytes: int | None = None):
        super().__init__()
        self.segment = segment
        with _segments_lock:
            seg = _segments.get(segment)
            if seg is None:
                seg = _segments[segment] = _Segment(capacity_bytes)
            elif capacity_bytes is not None:
                seg.capacity_bytes = capacity_bytes
        self._seg = seg

    @property
    def url(self) -> str:
        return f"memory://{self.segment}"

    def _put(self, key, data):
        data = bytes(data)
        seg = self._seg
        with seg.lock:
            old = seg.data.get(key)
            used = seg.used - (len(old) if old is not None else 0) + len(data)
            if seg.capacity_bytes is not None and used > seg.capacity_bytes:
                raise StorageFull(
                    f"memory segment {self.segment!r} would hold {used} bytes, "
                    f"capacity {seg.capacity_bytes}"
                )
            seg.data[key] = data
            seg.used = used

    def _get(self, key):
        try:
            return self._seg.data[key]
        except KeyError:
            raise KeyNotFound(str(key)) from None

    def _exists(self, key):
        return key in self._seg.data

    def _evict(self, key):
        seg = self._seg
        with seg.lock:
            old = seg.data.pop(key, None)
            if old is not None:
                seg.used -= len(old)

    def _keys(self, namespace):
        with self._seg.lock:
            keys = list(self._seg.data)
        return [k for k in keys if namespace is None or k.namespace == namespace]

    def _close(self):
        with _segments_lock:
            if _segments.get(self.segment) is self._seg:
                del _segments[self.segment]
        with self._seg.lock:
            self._seg.data.clear()
            self._seg.used = 0
