"""Executor that proxies large task data and manages proxy lifetimes.

Lifetimes follow an owner/borrower discipline: one :class:`OwnedProxy`
per stored object, any number of :class:`BorrowedProxy` views. The stored
bytes are evicted exactly once, when the owner has released and the last
borrow has ended.
"""

from __future__ import annotations

import concurrent.futures as cf
import threading
from dataclasses import dataclass
from typing import Any, Callable

from . import serial
from .connectors import connector_from_url
from .engine.client import Client
from .engine.protocol import ArgEnvelope
from .engine.worker import auto_result_policy  # noqa: F401  (re-export)
from .errors import BorrowAfterRelease
from .keys import StoreKey
from .proxy import Proxy
from .store import Store


@dataclass(frozen=True)
class ObjectInfo:
    """What a proxy policy gets to look at: the type tag and encoded size."""

    type_tag: str
    size_bytes: int


@dataclass
class ProxyPolicy:
    """Proxy an object iff ``predicate(info)`` holds; without a predicate,
    iff its encoded size is at least ``threshold_bytes``."""

    threshold_bytes: int = 1000
    predicate: Callable[[ObjectInfo], bool] | None = None
    store: Store | None = None

    def __post_init__(self):
        if self.threshold_bytes < 0:
            raise ValueError("threshold_bytes must be non-negative")

    def decide(self, info: ObjectInfo) -> bool:
        if self.predicate is not None:
            return bool(self.predicate(info))
        return info.size_bytes >= self.threshold_bytes


def _inspect(obj: Any) -> tuple[serial.Chunks, ObjectInfo]:
    payload = serial.dumps_parts(obj)
    return payload, ObjectInfo(serial.type_tag(obj), len(payload))


def should_proxy(policy: ProxyPolicy, obj: Any) -> bool:
    return policy.decide(_inspect(obj)[1])


def _evict_via_url(url: str) -> Callable[[StoreKey], None]:
    return lambda key: connector_from_url(url).evict(key)


class OwnershipToken:
    """Lifetime authority for one stored key."""

    def __init__(self, key: StoreKey, evict: Callable[[StoreKey], None]):
        self.key = key
        self._evict = evict
        self._lock = threading.Lock()
        self.borrow_count = 0
        self.state = "live"
        self.evicted = False

    def acquire_borrow(self) -> None:
        with self._lock:
            if self.state != "live":
                raise BorrowAfterRelease(f"{self.key} has been released")
            self.borrow_count += 1

    def end_borrow(self) -> None:
        with self._lock:
            if self.borrow_count == 0:
                raise RuntimeError("borrow count underflow")
            self.borrow_count -= 1
            self._maybe_evict()

    def release(self) -> None:
        with self._lock:
            if self.state == "released":
                return
            self.state = "released"
            self._maybe_evict()

    def _maybe_evict(self) -> None:
        if self.state == "released" and self.borrow_count == 0 and not self.evicted:
            self.evicted = True
            self._evict(self.key)

    def __repr__(self):
        return f"<OwnershipToken {self.key} {self.state} borrows={self.borrow_count}>"


class OwnedProxy:
    """The unique owner of a stored object."""

    def __init__(self, proxy: Proxy, evict: Callable[[StoreKey], None] | None = None):
        self.proxy = proxy
        evict = evict or _evict_via_url(proxy.factory.connector_url)
        self.token = OwnershipToken(proxy.key, evict)

    @property
    def metadata(self):
        return self.proxy.metadata

    def resolve(self) -> Any:
        return self.proxy.resolve()

    def borrow(self) -> "BorrowedProxy":
        return BorrowedProxy(self.proxy, self.token)

    def release(self) -> None:
        self.token.release()

    @property
    def released(self) -> bool:
        return self.token.state == "released"

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()

    def __repr__(self):
        return f"<OwnedProxy {self.proxy!r} {self.token.state}>"


class BorrowedProxy:
    """A view that keeps the stored object alive until :meth:`end`."""

    def __init__(self, proxy: Proxy, token: OwnershipToken):
        token.acquire_borrow()
        self.proxy = proxy
        self.token = token
        self._ended = False
        self._lock = threading.Lock()

    @property
    def metadata(self):
        return self.proxy.metadata

    def resolve(self) -> Any:
        return self.proxy.resolve()

    def borrow(self) -> "BorrowedProxy":
        return BorrowedProxy(self.proxy, self.token)

    def end(self) -> None:
        with self._lock:
            if self._ended:
                return
            self._ended = True
        self.token.end_borrow()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.end()


def own(proxy: Proxy, store: Store | None = None) -> OwnedProxy:
    evict = store.evict if store is not None else None
    return OwnedProxy(proxy, evict)


def borrow(owned: OwnedProxy | BorrowedProxy) -> BorrowedProxy:
    return owned.borrow()


def release(owned: OwnedProxy) -> None:
    owned.release()


class ExecutorFuture(cf.Future):
    """Future whose owned-proxy result passes to the caller on first
    :meth:`result`; unconsumed results are released at executor shutdown."""

    def __init__(self, executor: "StoreExecutor"):
        super().__init__()
        self._executor = executor
        self.task_result = None

    def result(self, timeout=None):
        value = super().result(timeout)
        if isinstance(value, OwnedProxy):
            self._executor._consumed(value)
        return value


class StoreExecutor(cf.Executor):
    """``concurrent.futures`` executor over an engine :class:`Client`.

    Arguments the policy selects are stored and sent as proxies; results
    that reach the threshold come back as :class:`OwnedProxy` objects the
    caller resolves on demand and releases when done::

        with StoreExecutor(client, store, ProxyPolicy(1000)) as ex:
            assert ex.submit("sum", [1, 2, 3]).result() == 6
    """

    def __init__(self, client: Client, store: Store, policy: ProxyPolicy | None = None,
                 proxy_results: bool = True, enabled: bool = True):
        self.client = client
        self.store = store
        self.policy = policy or ProxyPolicy(store=store)
        self.proxy_results = proxy_results
        self.enabled = enabled
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._inflight: set[ExecutorFuture] = set()
        self._unconsumed: dict[int, OwnedProxy] = {}
        self._shutdown = False

    def _result_policy(self) -> dict | None:
        if not (self.enabled and self.proxy_results):
            return None
        return {"connector": self.store.connector.url, "namespace": self.store.name,
                "threshold": self.policy.threshold_bytes}

    def _prepare(self, arg: Any, borrows: list) -> ArgEnvelope:
        if isinstance(arg, (OwnedProxy, BorrowedProxy)):
            b = arg.borrow()
            borrows.append(b)
            return ArgEnvelope.from_proxy(b.proxy)
        if isinstance(arg, Proxy):
            return ArgEnvelope.from_proxy(arg)
        payload, info = _inspect(arg)
        if not (self.enabled and self.policy.decide(info)):
            return ArgEnvelope.inline_payload(payload)
        owned = OwnedProxy(self.store.proxy_from_payload(payload, info.type_tag),
                           self.store.evict)
        borrows.append(owned.borrow())
        owned.release()  # evicted once the task's borrow ends
        return ArgEnvelope.from_proxy(owned.proxy)

    def submit(self, fn, /, *args, pure: bool = False, **kwargs) -> ExecutorFuture:
        if kwargs:
            raise TypeError("task functions take positional arguments only")
        if self._shutdown:
            raise RuntimeError("cannot submit after shutdown")
        borrows: list[BorrowedProxy] = []
        try:
            envelopes = [self._prepare(arg, borrows) for arg in args]
            inner = self.client.submit_spec(
                self.client.make_spec(fn, envelopes, pure, self._result_policy()))
        except BaseException:
            for b in borrows:
                b.end()
            raise
        outer = ExecutorFuture(self)
        with self._lock:
            self._inflight.add(outer)
        inner.add_done_callback(lambda f: self._finish(f, outer, borrows))
        return outer

    def _finish(self, inner, outer: ExecutorFuture, borrows: list) -> None:
        outer.task_result = inner.task_result
        exc = inner.exception()
        if exc is not None:
            value, error = None, exc
        else:
            value, error = inner.result(), None
            envelope = inner.task_result.value if inner.task_result else None
            if isinstance(value, Proxy) and envelope is not None and envelope.owned:
                value = OwnedProxy(value)
                with self._lock:
                    self._unconsumed[id(value)] = value
        if error is not None:
            outer.set_exception(error)
        else:
            outer.set_result(value)
        # the task is done with its inputs; evicting after the hand-off keeps
        # the unlinks off the caller's critical path
        try:
            for b in borrows:
                b.end()
        finally:
            with self._lock:
                self._inflight.discard(outer)
                self._idle.notify_all()

    def _consumed(self, owned: OwnedProxy) -> None:
        with self._lock:
            self._unconsumed.pop(id(owned), None)

    def shutdown(self, wait: bool = True, *, cancel_futures: bool = False) -> None:
        """Drain in-flight tasks, then release every result nobody consumed."""
        self._shutdown = True
        if wait:
            # outer futures complete before their inputs are evicted, so wait
            # for _finish itself rather than for the futures
            with self._lock:
                while self._inflight:
                    self._idle.wait()
        with self._lock:
            leftovers = list(self._unconsumed.values())
            self._unconsumed.clear()
        for owned in leftovers:
            owned.release()


def executor_submit(ex: StoreExecutor, function_id, args) -> ExecutorFuture:
    return ex.submit(function_id, *args)
