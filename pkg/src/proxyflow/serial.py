"""Payload serialization: the generic canonical codec, the dense array codec
and the registry that frames every stored payload with a codec header.

Payload layout (all stored objects)::

    offset  size  field
    0       4     magic b"PXSF"
    4       1     serializer id (1 = generic, 2 = dense)
    5       ...   codec body; the first body byte is the codec marker
                  (b"G" generic, b"D" dense)

The body marker lets a codec reject bytes that were produced by a different
codec even when the header id has been tampered with.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from typing import Any, Iterable

import numpy as np

from .errors import DecodeError, EncodeError

MAGIC = b"PXSF"
HEADER_SIZE = len(MAGIC) + 1

GENERIC_ID = 1
DENSE_ID = 2

_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")

_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


class CopyCounter:
    """Counts element-buffer copies made by the dense codec.

    Tests and :func:`proxyflow.codecbench.bench_codec` read it to check the
    copy bound; it has no effect on behaviour.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self.value += n

    def reset(self) -> int:
        with self._lock:
            value, self.value = self.value, 0
        return value


copy_counter = CopyCounter()


# --------------------------------------------------------------------------
# Dense arrays
# --------------------------------------------------------------------------

DENSE_MARKER = b"D"
_DTYPE_TAGS = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("<i8"): 3,
}
_TAG_DTYPES = {tag: dtype for dtype, tag in _DTYPE_TAGS.items()}
DENSE_DTYPES = ("f64", "f32", "i64")


def _le_dtype(dtype: np.dtype) -> np.dtype | None:
    if dtype.kind not in "fi":
        return None
    le = dtype.newbyteorder("<")
    return le if le in _DTYPE_TAGS else None


def is_dense(obj: Any) -> bool:
    """True if ``obj`` is an ndarray with a dtype the dense codec handles."""
    return isinstance(obj, np.ndarray) and _le_dtype(obj.dtype) is not None


def dense_parts(a: np.ndarray) -> list:
    """Dense body as a list of buffers; the element buffer is not copied
    unless ``a`` is non-contiguous or big-endian."""
    if not isinstance(a, np.ndarray):
        raise EncodeError(f"dense codec expects an ndarray, got {type(a).__name__}")
    dtype = _le_dtype(a.dtype)
    if dtype is None:
        raise EncodeError(f"unsupported dense dtype {a.dtype}")
    if a.ndim > 255:
        raise EncodeError("dense arrays are limited to rank 255")
    if not a.flags.c_contiguous or a.dtype != dtype:
        a = np.ascontiguousarray(a, dtype=dtype)
        copy_counter.add()
    header = (
        DENSE_MARKER
        + bytes((_DTYPE_TAGS[dtype], a.ndim))
        + b"".join(_U64.pack(n) for n in a.shape)
    )
    return [header, memoryview(a.reshape(-1)).cast("B")]


def encode_dense(a: np.ndarray) -> bytes:
    """Encode ``a`` as a dense body: marker, dtype tag, rank, shape, raw
    little-endian row-major elements."""
    out = b"".join(dense_parts(a))
    copy_counter.add()
    return out


def decode_dense(body) -> np.ndarray:
    """Inverse of :func:`encode_dense`.

    The returned array is a read-only view over ``body``; no element copy.
    """
    mv = memoryview(body).cast("B")
    if len(mv) < 3 or mv[0:1] != DENSE_MARKER:
        raise DecodeError("not a dense body")
    dtype = _TAG_DTYPES.get(mv[1])
    if dtype is None:
        raise DecodeError(f"bad dense dtype tag {mv[1]}")
    ndim = mv[2]
    offset = 3 + 8 * ndim
    if len(mv) < offset:
        raise DecodeError("truncated dense header")
    shape = tuple(_U64.unpack_from(mv, 3 + 8 * i)[0] for i in range(ndim))
    count = 1
    for n in shape:
        count *= n
    if len(mv) - offset != count * dtype.itemsize:
        raise DecodeError(
            f"dense body holds {len(mv) - offset} element bytes, "
            f"shape {shape} needs {count * dtype.itemsize}"
        )
    return np.frombuffer(mv, dtype=dtype, count=count, offset=offset).reshape(shape)


# --------------------------------------------------------------------------
# Generic canonical codec
# --------------------------------------------------------------------------

GENERIC_MARKER = b"G"


class Chunks:
    """A byte string held as a list of buffers. Encodes exactly like the
    joined ``bytes``; lets payloads travel to sockets and files without
    being concatenated first."""

    __slots__ = ("parts", "nbytes")

    def __init__(self, parts):
        self.parts = [p if isinstance(p, bytes) else memoryview(p).cast("B") for p in parts]
        self.nbytes = sum(len(p) for p in self.parts)

    def __len__(self) -> int:
        return self.nbytes

    def __bytes__(self) -> bytes:
        return b"".join(self.parts)

    def __eq__(self, other):
        if isinstance(other, Chunks):
            other = bytes(other)
        return bytes(self) == other

    __hash__ = None

    def __repr__(self):
        return f"<Chunks {len(self.parts)} parts, {self.nbytes} bytes>"


def as_parts(data) -> list:
    return data.parts if isinstance(data, Chunks) else [data]


def as_bytes(data) -> bytes:
    return bytes(data) if isinstance(data, Chunks) else data


def digest(data) -> bytes:
    """SHA-256 of ``data`` (bytes-like or :class:`Chunks`)."""
    h = hashlib.sha256()
    for part in as_parts(data):
        h.update(part)
    return h.digest()


# buffers at least this large are passed through by reference, not copied
_BIG = 4096


class _Sink:
    """Encoder output: small fields accumulate in ``buf``; large buffers
    become separate parts so the final join is the only copy."""

    __slots__ = ("buf", "parts")

    def __init__(self, buf: bytearray | None = None):
        self.buf = bytearray() if buf is None else buf
        self.parts: list = []

    def blob(self, raw) -> None:
        if len(raw) < _BIG:
            self.buf += raw
            return
        if self.buf:
            self.parts.append(bytes(self.buf))
            self.buf.clear()
        self.parts.append(raw)

    def finish(self) -> list:
        if self.buf:
            self.parts.append(bytes(self.buf))
            self.buf.clear()
        return self.parts


def _encode_value(obj: Any, sink: _Sink) -> None:
    out = sink.buf
    # bool before int: bool is an int subclass
    if obj is None:
        out += b"N"
    elif obj is True:
        out += b"T"
    elif obj is False:
        out += b"F"
    elif isinstance(obj, int):
        if _I64_MIN <= obj <= _I64_MAX:
            out += b"i"
            out += _I64.pack(obj)
        else:
            raw = obj.to_bytes((obj.bit_length() + 8) // 8, "big", signed=True)
            out += b"I"
            out += _U32.pack(len(raw))
            out += raw
    elif isinstance(obj, float):
        out += b"f"
        out += _F64.pack(obj)
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out += b"s"
        out += _U64.pack(len(raw))
        sink.blob(raw)
    elif isinstance(obj, (bytes, bytearray, memoryview)):
        raw = memoryview(obj).cast("B") if isinstance(obj, memoryview) else obj
        out += b"b"
        out += _U64.pack(len(raw))
        sink.blob(raw)
    elif isinstance(obj, Chunks):
        out += b"b"
        out += _U64.pack(obj.nbytes)
        for part in obj.parts:
            sink.blob(part)
    elif isinstance(obj, list):
        out += b"l"
        out += _U64.pack(len(obj))
        for item in obj:
            _encode_value(item, sink)
    elif isinstance(obj, dict):
        items = []
        for k, v in obj.items():
            if not isinstance(k, (str, int, float, bytes, type(None))):
                raise EncodeError(f"unsupported map key type {type(k).__name__}")
            ks = _Sink()
            _encode_value(k, ks)
            items.append((b"".join(ks.finish()), v))
        items.sort(key=lambda kv: kv[0])
        out += b"d"
        out += _U64.pack(len(items))
        for kb, v in items:
            sink.blob(kb)
            _encode_value(v, sink)
    elif is_dense(obj):
        parts = dense_parts(obj)
        out += b"a"
        out += _U64.pack(sum(len(p) for p in parts))
        for part in parts:
            sink.blob(part)
    else:
        raise EncodeError(f"generic codec cannot encode {type(obj).__name__}")


def _decode_value(mv: memoryview, pos: int) -> tuple[Any, int]:
    tag = mv[pos]
    pos += 1
    if tag == 0x4E:  # N
        return None, pos
    if tag == 0x54:  # T
        return True, pos
    if tag == 0x46:  # F
        return False, pos
    if tag == 0x69:  # i
        return _I64.unpack_from(mv, pos)[0], pos + 8
    if tag == 0x66:  # f
        return _F64.unpack_from(mv, pos)[0], pos + 8
    if tag == 0x49:  # I
        (n,) = _U32.unpack_from(mv, pos)
        pos += 4
        _check(mv, pos, n)
        return int.from_bytes(mv[pos : pos + n], "big", signed=True), pos + n
    if tag == 0x73 or tag == 0x62 or tag == 0x61:  # s b a
        (n,) = _U64.unpack_from(mv, pos)
        pos += 8
        _check(mv, pos, n)
        chunk = mv[pos : pos + n]
        if tag == 0x73:
            try:
                return str(chunk, "utf-8"), pos + n
            except UnicodeDecodeError as exc:
                raise DecodeError("invalid utf-8 string") from exc
        if tag == 0x62:
            return bytes(chunk), pos + n
        return decode_dense(chunk), pos + n
    if tag == 0x6C:  # l
        (n,) = _U64.unpack_from(mv, pos)
        pos += 8
        _check(mv, pos, n)
        items = []
        for _ in range(n):
            item, pos = _decode_value(mv, pos)
            items.append(item)
        return items, pos
    if tag == 0x64:  # d
        (n,) = _U64.unpack_from(mv, pos)
        pos += 8
        _check(mv, pos, n)
        result = {}
        for _ in range(n):
            k, pos = _decode_value(mv, pos)
            v, pos = _decode_value(mv, pos)
            try:
                result[k] = v
            except TypeError as exc:
                raise DecodeError("unhashable map key") from exc
        return result, pos
    raise DecodeError(f"unknown generic tag 0x{tag:02x}")


def _check(mv: memoryview, pos: int, n: int) -> None:
    if pos + n > len(mv):
        raise DecodeError("truncated generic body")


def encode_generic_parts(obj: Any, prefix: bytes = b"") -> list:
    """The generic body for ``obj`` as a list of buffers; large strings,
    blobs and arrays are referenced rather than copied."""
    sink = _Sink(bytearray(prefix))
    sink.buf += GENERIC_MARKER
    _encode_value(obj, sink)
    return sink.finish()


def encode_generic(obj: Any) -> bytes:
    """Deterministic, self-describing body for the closed value set: None,
    bool, int, float, str, bytes, list, dict and dense arrays. Map entries
    are ordered by their encoded keys so equal values give equal bytes."""
    return b"".join(encode_generic_parts(obj))


def decode_generic(body) -> Any:
    mv = memoryview(body).cast("B")
    if len(mv) < 2 or mv[0:1] != GENERIC_MARKER:
        raise DecodeError("not a generic body")
    try:
        value, pos = _decode_value(mv, 1)
    except (struct.error, IndexError) as exc:
        raise DecodeError("truncated generic body") from exc
    except RecursionError as exc:
        raise DecodeError("generic body nested too deeply") from exc
    if pos != len(mv):
        raise DecodeError(f"{len(mv) - pos} trailing bytes after generic value")
    return value


def type_tag(obj: Any) -> str:
    """Registered type name recorded in proxy metadata."""
    if is_dense(obj):
        return "DenseArray"
    if obj is None:
        return "none"
    if isinstance(obj, bool):
        return "bool"
    if isinstance(obj, int):
        return "int"
    if isinstance(obj, float):
        return "float"
    if isinstance(obj, str):
        return "str"
    if isinstance(obj, (bytes, bytearray, memoryview)):
        return "bytes"
    if isinstance(obj, list):
        return "list"
    if isinstance(obj, dict):
        return "dict"
    return type(obj).__name__


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------


class Codec:
    """A registered codec. ``encode_parts`` returns the body as a list of
    buffers so the registry can frame it with a single join."""

    def __init__(self, serializer_id: int, name: str, marker: bytes,
                 encode_parts, decode, accepts=None):
        if not 0 < serializer_id < 256:
            raise ValueError("serializer id must fit in one byte")
        self.serializer_id = serializer_id
        self.name = name
        self.marker = marker
        self.encode_parts = encode_parts
        self.decode = decode
        self.accepts = accepts or (lambda obj: True)

    def encode(self, obj: Any) -> bytes:
        return b"".join(self.encode_parts(obj))

    def __repr__(self):
        return f"Codec({self.serializer_id}, {self.name!r})"


GENERIC = Codec(GENERIC_ID, "generic", GENERIC_MARKER,
                encode_generic_parts, decode_generic)
DENSE = Codec(DENSE_ID, "dense", DENSE_MARKER, dense_parts, decode_dense,
              accepts=is_dense)


class SerializerRegistry:
    """Maps serializer ids to codecs and frames payloads with the header.

    Specialised codecs are tried in registration order; the default codec
    takes everything else.
    """

    def __init__(self, codecs: Iterable[Codec] = (GENERIC, DENSE),
                 default_id: int = GENERIC_ID):
        self._codecs: dict[int, Codec] = {}
        self._frozen = False
        for codec in codecs:
            self.register(codec)
        if default_id not in self._codecs:
            raise ValueError(f"default serializer {default_id} not registered")
        self.default_id = default_id

    def register(self, codec: Codec) -> None:
        if self._frozen:
            raise RuntimeError("registry is frozen")
        if codec.serializer_id in self._codecs:
            raise ValueError(f"serializer id {codec.serializer_id} already registered")
        self._codecs[codec.serializer_id] = codec

    def freeze(self) -> "SerializerRegistry":
        self._frozen = True
        return self

    def __getitem__(self, serializer_id: int) -> Codec:
        try:
            return self._codecs[serializer_id]
        except KeyError:
            raise DecodeError(f"serializer id {serializer_id} is not registered") from None

    def __contains__(self, serializer_id: int) -> bool:
        return serializer_id in self._codecs

    def ids(self) -> list[int]:
        return sorted(self._codecs)

    def select(self, obj: Any) -> Codec:
        for sid, codec in self._codecs.items():
            if sid != self.default_id and codec.accepts(obj):
                return codec
        return self._codecs[self.default_id]

    def dumps_parts(self, obj: Any, serializer_id: int | None = None) -> Chunks:
        """Header plus codec body for ``obj``, unjoined: large buffers are
        referenced, so this makes no copy of array elements or blobs."""
        codec = self.select(obj) if serializer_id is None else self[serializer_id]
        return Chunks([MAGIC + bytes((codec.serializer_id,)), *codec.encode_parts(obj)])

    def dumps(self, obj: Any, serializer_id: int | None = None) -> bytes:
        """Header plus codec body for ``obj`` as one contiguous buffer."""
        chunks = self.dumps_parts(obj, serializer_id)
        if chunks.parts[0][4] == DENSE_ID:
            copy_counter.add()
        return bytes(chunks)

    def loads(self, payload, expected_id: int | None = None) -> Any:
        payload = as_bytes(payload)
        sid = peek_serializer_id(payload)
        if expected_id is not None and sid != expected_id:
            raise DecodeError(f"payload serializer {sid} does not match expected {expected_id}")
        body = memoryview(payload).cast("B")[HEADER_SIZE:]
        return self[sid].decode(body)


def peek_serializer_id(payload) -> int:
    if isinstance(payload, Chunks):
        payload = payload.parts[0] if len(payload.parts[0]) >= HEADER_SIZE else bytes(payload)
    mv = memoryview(payload).cast("B")
    if len(mv) < HEADER_SIZE or bytes(mv[:4]) != MAGIC:
        raise DecodeError("payload does not start with the serializer header")
    return mv[4]


_DEFAULT = SerializerRegistry().freeze()


def default_registry() -> SerializerRegistry:
    return _DEFAULT


def dumps(obj: Any, serializer_id: int | None = None) -> bytes:
    return _DEFAULT.dumps(obj, serializer_id)


def dumps_parts(obj: Any, serializer_id: int | None = None) -> Chunks:
    return _DEFAULT.dumps_parts(obj, serializer_id)


def loads(payload, expected_id: int | None = None) -> Any:
    return _DEFAULT.loads(payload, expected_id)


def encoded_size(obj: Any) -> int:
    """Length of the framed payload ``dumps(obj)`` would produce."""
    return len(dumps_parts(obj))
