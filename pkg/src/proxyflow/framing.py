"""Length-prefixed framing shared by the key-value service and the task
engine: every frame is a 4-byte big-endian payload length followed by the
payload."""

from __future__ import annotations

import asyncio
import socket
import struct

from .errors import ProtocolError

MAX_FRAME = 1 << 30
_LEN = struct.Struct(">I")


def frame_size(payload_len: int) -> int:
    """Bytes on the wire for a payload of ``payload_len`` bytes."""
    return _LEN.size + payload_len


def send_frame(sock: socket.socket, *parts) -> int:
    """Send one frame made of ``parts`` and return the bytes written."""
    n = sum(len(p) for p in parts)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit {MAX_FRAME}")
    views = [memoryview(_LEN.pack(n))]
    views += [memoryview(p).cast("B") for p in parts if len(p)]
    # one gather write per frame instead of a syscall per part
    while views:
        sent = sock.sendmsg(views)
        while sent:
            if sent >= len(views[0]):
                sent -= len(views.pop(0))
            else:
                views[0] = views[0][sent:]
                sent = 0
    return frame_size(n)


def _recv_exact(sock: socket.socket, n: int) -> bytearray | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            return None
        got += k
    return buf


def recv_frame(sock: socket.socket) -> bytearray | None:
    """Read one frame payload; ``None`` on clean EOF before a header."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError(f"peer announced a {n}-byte frame")
    body = _recv_exact(sock, n)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return body


async def read_frame(reader: asyncio.StreamReader) -> bytes | None:
    try:
        head = await reader.readexactly(_LEN.size)
    except asyncio.IncompleteReadError as exc:
        if exc.partial:
            raise ProtocolError("connection closed mid-header") from None
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError(f"peer announced a {n}-byte frame")
    try:
        return await reader.readexactly(n)
    except asyncio.IncompleteReadError:
        raise ProtocolError("connection closed mid-frame") from None


def write_frame(writer: asyncio.StreamWriter, *parts) -> int:
    n = sum(len(p) for p in parts)
    writer.write(_LEN.pack(n))
    for p in parts:
        writer.write(p)
    return frame_size(n)
