"""Centralized scheduler.

All state lives on one asyncio event loop. Ready tasks are served FIFO and
handed to idle worker slots round-robin; every task-carrying frame that
passes through is counted in :class:`SchedulerStats`.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import signal
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from ..errors import ProtocolError
from ..framing import read_frame, write_frame
from .protocol import (
    DISPATCH, MAX_ATTEMPTS, REGISTER, RESULT, SHUTDOWN, STATS, SUBMIT,
    ArgEnvelope, SchedulerStats, decode_message, encode_message, key_from_digests,
)

log = logging.getLogger(__name__)


@dataclass(eq=False)
class _Conn:
    writer: asyncio.StreamWriter
    alive: bool = True

    def send(self, kind: int, body: dict) -> int:
        if not self.alive:
            return 0
        return write_frame(self.writer, *encode_message(kind, body))


@dataclass(eq=False)
class _Worker(_Conn):
    worker_id: str = ""
    slots: int = 1
    running: dict = field(default_factory=dict)


@dataclass
class _Task:
    tid: int
    client: _Conn
    client_tid: int
    function_id: str
    args: list
    pure: bool
    result_policy: dict | None
    key: bytes | None
    t_submit: int
    nbytes: int = 0
    attempts: int = 0
    t_dispatch: int = 0


class Scheduler:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self.stats = SchedulerStats()
        self._workers: dict[str, _Worker] = {}
        self._idle: deque[str] = deque()
        self._queue: deque[_Task] = deque()
        self._cache: dict[bytes, dict] = {}
        self._inflight: dict[bytes, list[_Task]] = {}
        self._tids = itertools.count()
        self._conns: set[_Conn] = set()
        self._server: asyncio.AbstractServer | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stopped: asyncio.Event | None = None
        self._ready = threading.Event()
        self._thread: threading.Thread | None = None

    # -- lifecycle -------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    async def serve(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._stopped = asyncio.Event()
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        sock = self._server.sockets[0]
        self.port = sock.getsockname()[1]
        log.info("scheduler listening on %s:%d", self.host, self.port)
        self._ready.set()
        try:
            await self._stopped.wait()
        finally:
            self._server.close()
            for conn in list(self._conns):
                conn.alive = False
                conn.writer.close()
            await self._server.wait_closed()

    def stop(self) -> None:
        """Stop serving; safe to call from any thread."""
        if self._loop is not None and self._stopped is not None:
            try:
                self._loop.call_soon_threadsafe(self._stopped.set)
            except RuntimeError:
                pass  # loop already closed

    def start(self) -> "Scheduler":
        """Run the event loop in a daemon thread and wait until listening."""
        self._thread = threading.Thread(target=lambda: asyncio.run(self.serve()),
                                        name="scheduler", daemon=True)
        self._thread.start()
        if not self._ready.wait(10):
            raise RuntimeError("scheduler failed to start")
        return self

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    # -- connections -----------------------------------------------------

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        sock = writer.get_extra_info("socket")
        if sock is not None:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn: _Conn | None = None
        try:
            payload = await read_frame(reader)
            if payload is None:
                return
            kind, body = decode_message(payload)
            if kind != REGISTER:
                raise ProtocolError("first message must be REGISTER")
            if body.get("role") == "worker":
                if str(body["id"]) in self._workers:
                    raise ProtocolError(f"duplicate worker id {body['id']}")
                conn = _Worker(writer, worker_id=str(body["id"]), slots=int(body.get("slots", 1)))
                self._add_worker(conn)
            elif body.get("role") == "client":
                conn = _Conn(writer)
            else:
                raise ProtocolError(f"unknown role {body.get('role')!r}")
            self._conns.add(conn)
            while True:
                payload = await read_frame(reader)
                if payload is None:
                    break
                kind, body = decode_message(payload)
                self._on_message(conn, kind, body, 4 + len(payload))
                await writer.drain()
        except (ProtocolError, KeyError, TypeError, ValueError) as exc:
            log.warning("closing connection after protocol violation: %s", exc)
        except (ConnectionError, OSError):
            pass
        finally:
            if conn is not None:
                conn.alive = False
                self._conns.discard(conn)
                if isinstance(conn, _Worker):
                    self._worker_lost(conn)
            writer.close()

    def _on_message(self, conn: _Conn, kind: int, body: dict, nbytes: int) -> None:
        if kind == SUBMIT and not isinstance(conn, _Worker):
            self._on_submit(conn, body, nbytes)
        elif kind == RESULT and isinstance(conn, _Worker):
            self._on_result(conn, body, nbytes)
        elif kind == STATS:
            body = self.stats.to_wire()
            body.update(workers=len(self._workers), queued=len(self._queue))
            conn.send(STATS, body)
        elif kind == SHUTDOWN:
            for w in list(self._workers.values()):
                w.send(SHUTDOWN, {})
            self.stop()
        else:
            raise ProtocolError(f"unexpected message kind {kind}")

    # -- scheduling ------------------------------------------------------

    def _add_worker(self, w: _Worker) -> None:
        self._workers[w.worker_id] = w
        self._idle.extend([w.worker_id] * w.slots)
        log.info("worker %s joined with %d slots", w.worker_id, w.slots)
        self._dispatch()

    def _worker_lost(self, w: _Worker) -> None:
        self._workers.pop(w.worker_id, None)
        if w.running:
            log.warning("worker %s lost with %d running tasks", w.worker_id, len(w.running))
        for task in reversed(list(w.running.values())):
            if task.attempts < MAX_ATTEMPTS:
                self._queue.appendleft(task)
            else:
                self._complete(task, {"ok": False, "v": None, "x": 0, "w": w.worker_id,
                                      "e": f"worker lost {task.attempts} times"})
        w.running.clear()
        self._dispatch()

    def _on_submit(self, client: _Conn, body: dict, nbytes: int) -> None:
        self.stats.bytes_received += nbytes
        task = _Task(
            tid=next(self._tids), client=client, client_tid=body["id"],
            function_id=body["f"], args=body["a"], pure=bool(body.get("p")),
            result_policy=body.get("r"), key=body.get("key"),
            t_submit=time.monotonic_ns(), nbytes=nbytes,
        )
        # owned result proxies cannot be shared between consumers
        if task.pure and task.result_policy is None:
            digests = [ArgEnvelope.from_wire(a).digest() for a in task.args]
            key = key_from_digests(task.function_id, digests).digest
            if task.key is not None and task.key != key:
                self._reply(task, {"ok": False, "v": None, "x": 0, "w": "",
                                      "e": "client and scheduler task keys disagree"})
                return
            task.key = key
            cached = self._cache.get(key)
            if cached is not None:
                self.stats.cache_hits += 1
                self._complete(task, cached)
                return
            waiters = self._inflight.get(key)
            if waiters is not None:
                self.stats.cache_hits += 1
                waiters.append(task)
                return
            self._inflight[key] = [task]
        self._queue.append(task)
        self._dispatch()

    def _dispatch(self) -> None:
        while self._queue and self._idle:
            wid = self._idle.popleft()
            w = self._workers.get(wid)
            if w is None or not w.alive:
                continue
            task = self._queue.popleft()
            task.attempts += 1
            task.t_dispatch = time.monotonic_ns()
            n = w.send(DISPATCH, {"id": task.tid, "f": task.function_id,
                                  "a": task.args, "r": task.result_policy})
            task.nbytes += n
            self.stats.bytes_sent += n
            self.stats.tasks_dispatched += 1
            w.running[task.tid] = task

    def _on_result(self, w: _Worker, body: dict, nbytes: int) -> None:
        self.stats.bytes_received += nbytes
        task = w.running.pop(body["id"], None)
        if task is None:
            raise ProtocolError(f"worker {w.worker_id} returned unknown task {body['id']}")
        self._idle.append(w.worker_id)
        task.nbytes += nbytes
        result = {"ok": bool(body["ok"]), "v": body.get("v"), "e": body.get("e"),
                  "w": w.worker_id, "x": body.get("x", 0), "d": task.t_dispatch - task.t_submit}
        self._complete(task, result)
        self._dispatch()

    def _complete(self, task: _Task, result: dict) -> None:
        self._reply(task, result)
        if task.key is None or not task.pure or task.result_policy is not None:
            return
        waiters = self._inflight.pop(task.key, None)
        if waiters is None:
            return
        if result["ok"]:
            self._cache[task.key] = result
        for other in waiters:
            if other is not task:
                self._reply(other, result)

    def _reply(self, task: _Task, result: dict) -> None:
        body = dict(result)
        body.update(id=task.client_tid, key=task.key, sb=task.nbytes, n=task.attempts)
        body.setdefault("d", 0)
        self.stats.bytes_sent += task.client.send(RESULT, body)


def run_scheduler(host: str = "127.0.0.1", port: int = 8786, ready=None) -> None:
    """Serve until SIGINT/SIGTERM or a SHUTDOWN message. ``ready`` is called
    with the bound ``(host, port)`` once listening."""
    scheduler = Scheduler(host, port)
    if ready is not None:
        threading.Thread(target=lambda: scheduler._ready.wait() and ready(scheduler.address),
                         daemon=True).start()

    async def main():
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, scheduler.stop)
            except (NotImplementedError, RuntimeError):
                pass
        await scheduler.serve()

    asyncio.run(main())
