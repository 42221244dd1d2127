from __future__ import annotations

import itertools
import logging
import threading
import time
from concurrent.futures import Future
from typing import Any

from ..errors import ProtocolError, SchedulerUnreachable, TaskError, UnknownFunction
from ..framing import frame_size, recv_frame, send_frame
from ..proxy import Proxy
from . import functions
from .protocol import (
    REGISTER, RESULT, SHUTDOWN, STATS, SUBMIT, ArgEnvelope, SchedulerStats, TaskKey,
    TaskResult, TaskSpec, Timings, decode_message, encode_message, task_key,
)
from .worker import connect

log = logging.getLogger(__name__)

_DEFAULT = object()


class TaskFuture(Future):
    """Future for one task. ``result()`` waits at most the client timeout
    unless told otherwise; ``task_result`` carries timings and accounting
    once the task is done."""

    def __init__(self, spec: TaskSpec, timeout: float | None):
        super().__init__()
        self.spec = spec
        self.task_result: TaskResult | None = None
        self._timeout = timeout
        self._t_submit = time.perf_counter_ns()

    def result(self, timeout=_DEFAULT):
        return super().result(self._timeout if timeout is _DEFAULT else timeout)

    def exception(self, timeout=_DEFAULT):
        return super().exception(self._timeout if timeout is _DEFAULT else timeout)


class Client:
    """Connection to the scheduler.

    Arguments are sent inline (fully encoded in the task message) unless
    they are :class:`~proxyflow.proxy.Proxy` objects or prebuilt envelopes.
    Results arrive decoded, or as unresolved proxies when the worker stored
    them.
    """

    def __init__(self, address: tuple[str, int], timeout: float | None = 300.0,
                 connect_timeout: float = 10.0, validate: bool = True):
        self.address = tuple(address)
        self.timeout = timeout
        self.validate = validate
        try:
            self._sock = connect(self.address, connect_timeout)
        except OSError as exc:
            raise SchedulerUnreachable(f"cannot reach scheduler at {self.address}: {exc}") from exc
        self._send_lock = threading.Lock()
        self._pending: dict[int, TaskFuture] = {}
        self._stats_waiters: list[Future] = []
        self._lock = threading.Lock()
        self._ids = itertools.count()
        self._closed = False
        self._send(REGISTER, {"role": "client"})
        self._reader = threading.Thread(target=self._read_loop, name="client-reader", daemon=True)
        self._reader.start()

    # -- wire ------------------------------------------------------------

    def _send(self, kind: int, body: dict) -> int:
        try:
            with self._send_lock:
                return send_frame(self._sock, *encode_message(kind, body))
        except OSError as exc:
            raise SchedulerUnreachable(f"lost scheduler connection: {exc}") from exc

    def _read_loop(self) -> None:
        error: Exception = SchedulerUnreachable("scheduler closed the connection")
        try:
            while True:
                payload = recv_frame(self._sock)
                if payload is None:
                    break
                kind, body = decode_message(payload)
                if kind == RESULT:
                    self._on_result(body, frame_size(len(payload)))
                elif kind == STATS:
                    with self._lock:
                        waiter = self._stats_waiters.pop(0) if self._stats_waiters else None
                    if waiter is not None:
                        waiter.set_result(SchedulerStats.from_wire(body))
        except (OSError, ProtocolError) as exc:
            if not self._closed:
                log.warning("client reader stopped: %s", exc)
            error = SchedulerUnreachable(str(exc))
        with self._lock:
            pending = list(self._pending.values()) + self._stats_waiters
            self._pending.clear()
            self._stats_waiters = []
        for fut in pending:
            if not fut.done():
                fut.set_exception(error)

    def _on_result(self, body: dict, nbytes: int) -> None:
        with self._lock:
            fut = self._pending.pop(body["id"], None)
        if fut is None:
            return
        value = ArgEnvelope.from_wire(body["v"]) if body.get("v") is not None else None
        total = time.perf_counter_ns() - fut._t_submit
        exec_ns = int(body.get("x") or 0)
        tr = TaskResult(
            key=TaskKey(body["key"]) if body.get("key") else None,
            ok=bool(body["ok"]), value=value, error=body.get("e"),
            worker_id=str(body.get("w") or ""),
            timings=Timings(int(body.get("d") or 0), exec_ns, max(total, exec_ns)),
            attempts=int(body.get("n") or 0),
            scheduler_bytes=int(body.get("sb") or 0) + nbytes,
        )
        fut.task_result = tr
        if not tr.ok:
            message = tr.error or "task failed"
            exc_type = UnknownFunction if message.startswith("UnknownFunction") else TaskError
            fut.set_exception(exc_type(message))
            return
        try:
            fut.set_result(value.open())
        except Exception as exc:
            fut.set_exception(exc)

    # -- API -------------------------------------------------------------

    def make_spec(self, function_id, args, pure: bool = False,
                  result_policy: dict | None = None) -> TaskSpec:
        function_id = functions.name_of(function_id)
        envelopes = []
        for arg in args:
            if isinstance(arg, ArgEnvelope):
                envelopes.append(arg)
            elif isinstance(arg, Proxy):
                envelopes.append(ArgEnvelope.from_proxy(arg))
            else:
                envelopes.append(ArgEnvelope.inline(arg))
        return TaskSpec(function_id, envelopes, pure, result_policy)

    def submit(self, function_id, *args: Any, pure: bool = False,
               result_policy: dict | None = None) -> TaskFuture:
        """Submit ``function_id(*args)``; ``pure`` tasks share results by key.

        ``function_id`` is a registered name or the registered callable.
        """
        return self.submit_spec(self.make_spec(function_id, args, pure, result_policy))

    def submit_spec(self, spec: TaskSpec) -> TaskFuture:
        if self.validate and not functions.is_registered(spec.function_id):
            raise UnknownFunction(f"no task function named {spec.function_id!r}")
        if self._closed:
            raise SchedulerUnreachable("client is closed")
        fut = TaskFuture(spec, self.timeout)
        tid = next(self._ids)
        key = task_key(spec).digest if spec.pure else None
        with self._lock:
            self._pending[tid] = fut
        try:
            self._send(SUBMIT, {"id": tid, "f": spec.function_id, "a": spec.wire_args(),
                                "p": spec.pure, "r": spec.result_policy, "key": key})
        except SchedulerUnreachable:
            with self._lock:
                self._pending.pop(tid, None)
            raise
        return fut

    def stats(self, timeout: float | None = 30.0) -> SchedulerStats:
        waiter: Future = Future()
        with self._lock:
            self._stats_waiters.append(waiter)
        self._send(STATS, {})
        return waiter.result(timeout)

    def shutdown_cluster(self) -> None:
        """Ask the scheduler to stop itself and all workers."""
        self._send(SHUTDOWN, {})

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(2)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
