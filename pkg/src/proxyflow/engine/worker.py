from __future__ import annotations

import importlib
import logging
import signal
import socket
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor

from .. import serial
from ..connectors import connector_from_url
from ..errors import ProtocolError
from ..framing import recv_frame, send_frame
from ..proxy import Proxy
from ..store import Store
from . import functions
from .protocol import (
    DISPATCH, REGISTER, RESULT, SHUTDOWN, ArgEnvelope, decode_message, encode_message,
)

log = logging.getLogger(__name__)


def connect(address: tuple[str, int], timeout: float = 10.0) -> socket.socket:
    """Connect to ``address``, retrying until ``timeout`` elapses."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection(address, timeout=timeout)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def open_args(wires: list) -> list:
    """Decode argument envelopes, resolving proxies just in time."""
    values = []
    for wire in wires:
        value = ArgEnvelope.from_wire(wire).open()
        if isinstance(value, Proxy):
            value = value.resolve()
        values.append(value)
    return values


_stores: dict[tuple[str, str], Store] = {}
_stores_lock = threading.Lock()


def _store_for(url: str, namespace: str) -> Store:
    with _stores_lock:
        store = _stores.get((url, namespace))
        if store is None or store.connector.closed:
            store = _stores[(url, namespace)] = Store(namespace, connector_from_url(url))
        return store


def auto_result_policy(policy: dict | None, result) -> ArgEnvelope:
    """Inline ``result`` or, when its encoded size reaches the policy
    threshold, store it and return a proxy envelope flagged as owned (the
    receiving client becomes the owner)."""
    payload = serial.dumps_parts(result)
    if policy is None or len(payload) < int(policy["threshold"]):
        return ArgEnvelope.inline_payload(payload)
    store = _store_for(policy["connector"], policy["namespace"])
    proxy = store.proxy_from_payload(payload, serial.type_tag(result))
    return ArgEnvelope.from_proxy(proxy, owned=True)


class Worker:
    """Executes dispatched tasks on up to ``slots`` threads.

    Results whose encoded size reaches the task's result-policy threshold
    are stored through the named connector and returned as owned proxies.
    """

    def __init__(self, scheduler: tuple[str, int], slots: int = 1,
                 worker_id: str | None = None, imports: tuple[str, ...] = ()):
        self.scheduler = tuple(scheduler)
        self.slots = slots
        self.worker_id = worker_id or f"worker-{uuid.uuid4().hex[:8]}"
        for module in imports:
            importlib.import_module(module)
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(slots, thread_name_prefix=self.worker_id)
        self._lost = threading.Event()
        self._thread: threading.Thread | None = None

    def _execute(self, body: dict) -> None:
        exec_ns = 0
        try:
            fn = functions.get_function(body["f"])
            args = open_args(body["a"])
            t0 = time.perf_counter_ns()
            result = fn(*args)
            exec_ns = time.perf_counter_ns() - t0
            envelope = auto_result_policy(body.get("r"), result)
            reply = {"id": body["id"], "ok": True, "v": envelope.to_wire(), "e": None}
        except functions.WorkerExit:
            log.warning("%s: task requested worker exit", self.worker_id)
            self._drop()
            return
        except Exception as exc:
            reply = {"id": body["id"], "ok": False, "v": None,
                     "e": f"{type(exc).__name__}: {exc}"}
        reply.update(w=self.worker_id, x=exec_ns)
        self._send(RESULT, reply)

    def _send(self, kind: int, body: dict) -> None:
        if self._lost.is_set():
            return
        with self._send_lock:
            try:
                send_frame(self._sock, *encode_message(kind, body))
            except OSError:
                self._drop()

    def _drop(self) -> None:
        self._lost.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def run(self) -> None:
        """Serve dispatches until SHUTDOWN, scheduler loss or :meth:`stop`."""
        self._sock = connect(self.scheduler)
        self._send(REGISTER, {"role": "worker", "id": self.worker_id, "slots": self.slots,
                              "functions": functions.names()})
        try:
            while not self._lost.is_set():
                try:
                    payload = recv_frame(self._sock)
                except (OSError, ProtocolError):
                    break
                if payload is None:
                    break
                kind, body = decode_message(payload)
                if kind == DISPATCH:
                    self._pool.submit(self._execute, body)
                elif kind == SHUTDOWN:
                    break
                else:
                    log.warning("%s: ignoring message kind %d", self.worker_id, kind)
        finally:
            self._lost.set()
            self._pool.shutdown(wait=False, cancel_futures=True)
            self._sock.close()

    def start(self) -> "Worker":
        self._thread = threading.Thread(target=self.run, name=self.worker_id, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._drop()
        if self._thread is not None:
            self._thread.join(5)

    @property
    def alive(self) -> bool:
        return self._thread is not None and self._thread.is_alive()


def run_worker(scheduler: tuple[str, int], slots: int = 1, worker_id: str | None = None,
               imports: tuple[str, ...] = ()) -> None:
    worker = Worker(scheduler, slots, worker_id, imports)
    try:
        signal.signal(signal.SIGTERM, lambda *_: worker._drop())
    except ValueError:
        pass
    worker.run()

