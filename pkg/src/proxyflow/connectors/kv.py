"""Single-node key-value service and its client connector.

Every request and response is one frame (see :mod:`proxyflow.framing`).

Request payload::

    opcode  u8       PUT=1 GET=2 EXISTS=3 EVICT=4 CLOSE=5 KEYS=6
    keylen  u32 BE, key bytes (utf-8 "namespace/id"; a namespace prefix
                    or the empty string for KEYS)
    [vallen u32 BE, value bytes]   PUT only

Response payload::

    status  u8       OK=0 NOT_FOUND=1 ERR=2
    [vallen u32 BE, value bytes]   GET: the stored bytes; EXISTS: one byte
                                   0/1; KEYS: newline-joined keys;
                                   ERR: utf-8 message
"""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import struct
import threading

from ..errors import ConnectorUnavailable, KeyNotFound, ProtocolError, StorageFull
from ..framing import recv_frame, send_frame
from ..serial import as_parts
from ..keys import StoreKey
from .base import Connector

log = logging.getLogger(__name__)

PUT, GET, EXISTS, EVICT, CLOSE, KEYS = 1, 2, 3, 4, 5, 6
OK, NOT_FOUND, ERR = 0, 1, 2

_U32 = struct.Struct(">I")


def encode_request(opcode: int, key: str, value: bytes | None = None) -> list:
    kb = key.encode("utf-8")
    parts = [bytes((opcode,)), _U32.pack(len(kb)), kb]
    if value is not None:
        parts += [_U32.pack(len(value)), *as_parts(value)]
    return parts


def decode_request(payload) -> tuple[int, str, memoryview | None]:
    mv = memoryview(payload)
    try:
        opcode = mv[0]
        (klen,) = _U32.unpack_from(mv, 1)
        end = 5 + klen
        if end > len(mv):
            raise ProtocolError("truncated key")
        key = str(mv[5:end], "utf-8")
        value = None
        if end < len(mv):
            (vlen,) = _U32.unpack_from(mv, end)
            if end + 4 + vlen != len(mv):
                raise ProtocolError("value length does not match frame")
            value = mv[end + 4 :]
    except (IndexError, struct.error, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed request: {exc}") from exc
    return opcode, key, value


def encode_response(status: int, value: bytes | None = None) -> list:
    parts = [bytes((status,))]
    if value is not None:
        parts += [_U32.pack(len(value)), *as_parts(value)]
    return parts


def decode_response(payload) -> tuple[int, memoryview | None]:
    mv = memoryview(payload)
    if len(mv) < 1:
        raise ProtocolError("empty response")
    status = mv[0]
    if len(mv) == 1:
        return status, None
    (vlen,) = _U32.unpack_from(mv, 1)
    if 5 + vlen != len(mv):
        raise ProtocolError("value length does not match frame")
    return status, mv[5:]


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: KVServer = self.server.kv  # type: ignore[attr-defined]
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                payload = recv_frame(sock)
            except (ProtocolError, OSError) as exc:
                log.warning("dropping kv client: %s", exc)
                return
            if payload is None:
                return
            try:
                opcode, key, value = decode_request(payload)
                response = server.execute(opcode, key, value)
            except ProtocolError as exc:
                log.warning("protocol violation from kv client: %s", exc)
                return
            try:
                send_frame(sock, *response)
            except OSError:
                return
            if opcode == CLOSE:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class KVServer:
    """Threaded in-memory key-value server.

    ``port=0`` binds an ephemeral port; read :attr:`address` after start.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 capacity_bytes: int | None = None):
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self._used = 0
        self.capacity_bytes = capacity_bytes
        self._server = _TCPServer((host, port), _Handler, bind_and_activate=True)
        self._server.kv = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"kv://{host}:{port}"

    def execute(self, opcode: int, key: str, value) -> list:
        if opcode == PUT:
            if value is None:
                raise ProtocolError("PUT without value")
            value = bytes(value)
            with self._lock:
                old = self._data.get(key)
                used = self._used - (len(old) if old is not None else 0) + len(value)
                if self.capacity_bytes is not None and used > self.capacity_bytes:
                    return encode_response(ERR, b"StorageFull: capacity exceeded")
                self._data[key] = value
                self._used = used
            return encode_response(OK)
        if opcode == GET:
            data = self._data.get(key)
            if data is None:
                return encode_response(NOT_FOUND)
            return encode_response(OK, data)
        if opcode == EXISTS:
            return encode_response(OK, b"\x01" if key in self._data else b"\x00")
        if opcode == EVICT:
            with self._lock:
                old = self._data.pop(key, None)
                if old is not None:
                    self._used -= len(old)
            return encode_response(OK)
        if opcode == KEYS:
            with self._lock:
                keys = [k for k in self._data if k.startswith(key)]
            return encode_response(OK, "\n".join(sorted(keys)).encode())
        if opcode == CLOSE:
            return encode_response(OK)
        raise ProtocolError(f"unknown opcode {opcode}")

    def start(self) -> "KVServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="kv-server", daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class RemoteKVConnector(Connector):
    """Client for :class:`KVServer`. Keeps a small pool of sockets so
    concurrent threads do not serialize on one connection."""

    kind = "remote_kv"

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        super().__init__()
        self.host = host
        self.port = int(port)
        self.timeout = timeout
        self._pool: queue.SimpleQueue = queue.SimpleQueue()
        self._all: list[socket.socket] = []
        self._pool_lock = threading.Lock()
        self._release(self._connect())

    @property
    def url(self) -> str:
        return f"kv://{self.host}:{self.port}"

    def _connect(self) -> socket.socket:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise ConnectorUnavailable(f"cannot reach kv server {self.url}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._pool_lock:
            self._all.append(sock)
        return sock

    def _acquire(self) -> socket.socket:
        try:
            return self._pool.get_nowait()
        except queue.Empty:
            return self._connect()

    def _release(self, sock: socket.socket) -> None:
        self._pool.put(sock)

    def _discard(self, sock: socket.socket) -> None:
        with self._pool_lock:
            if sock in self._all:
                self._all.remove(sock)
        sock.close()

    def _call(self, opcode: int, key: str, value: bytes | None = None):
        sock = self._acquire()
        try:
            send_frame(sock, *encode_request(opcode, key, value))
            payload = recv_frame(sock)
            if payload is None:
                raise ConnectorUnavailable("kv server closed the connection")
            status, data = decode_response(payload)
        except (OSError, ProtocolError) as exc:
            self._discard(sock)
            if isinstance(exc, ConnectorUnavailable):
                raise
            raise ConnectorUnavailable(f"kv request failed: {exc}") from exc
        self._release(sock)
        if status == ERR:
            message = bytes(data or b"").decode("utf-8", "replace")
            if message.startswith("StorageFull"):
                raise StorageFull(message)
            raise ConnectorUnavailable(f"kv server error: {message}")
        return status, data

    def _put(self, key, data):
        self._call(PUT, str(key), data)

    def _get(self, key):
        status, data = self._call(GET, str(key))
        if status == NOT_FOUND:
            raise KeyNotFound(str(key))
        return bytes(data)

    def _exists(self, key):
        _, data = self._call(EXISTS, str(key))
        return bytes(data) == b"\x01"

    def _evict(self, key):
        self._call(EVICT, str(key))

    def _keys(self, namespace):
        prefix = "" if namespace is None else f"{namespace}/"
        _, data = self._call(KEYS, prefix)
        text = bytes(data).decode()
        return [StoreKey.parse(line) for line in text.split("\n") if line]

    def _close(self):
        with self._pool_lock:
            socks, self._all = self._all, []
        for sock in socks:
            try:
                send_frame(sock, *encode_request(CLOSE, ""))
                recv_frame(sock)
            except OSError:
                pass
            sock.close()
