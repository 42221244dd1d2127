from __future__ import annotations

import errno
import mmap
import os
import uuid
from pathlib import Path

from ..errors import ConnectorUnavailable, KeyNotFound, StorageFull
from ..keys import StoreKey
from ..serial import as_parts
from .base import Connector


def _write_all(f, parts) -> None:
    for part in parts:
        mv = memoryview(part).cast("B")
        while mv:
            mv = mv[f.write(mv):]

_TMP_PREFIX = ".tmp-"
_MMAP_MIN = 1 << 16  # smaller files are cheaper to read() than to map


class FilesystemConnector(Connector):
    """One file per key at ``root/namespace/id``.

    Writes land in a temporary file in the target directory and are renamed
    into place, so readers never observe a partial payload. Data persists
    across close and reopen.

    Large payloads are read back as a read-only memoryview over a mapping of
    the file, which skips copying the bytes into a fresh buffer. Files are
    never modified in place, so the mapping stays valid after an evict.
    """

    kind = "filesystem"

    def __init__(self, root: str | os.PathLike):
        super().__init__()
        self.root = Path(root).resolve()
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConnectorUnavailable(f"cannot use {self.root}: {exc}") from exc
        if not self.root.is_dir():
            raise ConnectorUnavailable(f"{self.root} is not a directory")

    @property
    def url(self) -> str:
        return self.root.as_uri()

    def _path(self, key: StoreKey) -> Path:
        return self.root / key.namespace / key.id

    def _put(self, key, data):
        path = self._path(key)
        tmp = path.with_name(f"{_TMP_PREFIX}{uuid.uuid4().hex}")
        try:
            path.parent.mkdir(exist_ok=True)
            with open(tmp, "wb", buffering=0) as f:
                _write_all(f, as_parts(data))
            os.replace(tmp, path)
        except OSError as exc:
            try:
                tmp.unlink()
            except OSError:
                pass
            if exc.errno in (errno.ENOSPC, errno.EDQUOT):
                raise StorageFull(str(exc)) from exc
            raise ConnectorUnavailable(str(exc)) from exc

    def _get(self, key):
        try:
            with open(self._path(key), "rb") as f:
                if os.fstat(f.fileno()).st_size < _MMAP_MIN:
                    return f.read()
                return memoryview(mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ))
        except FileNotFoundError:
            raise KeyNotFound(str(key)) from None
        except OSError as exc:
            raise ConnectorUnavailable(str(exc)) from exc

    def _exists(self, key):
        return self._path(key).is_file()

    def _evict(self, key):
        try:
            self._path(key).unlink()
        except FileNotFoundError:
            pass
        except OSError as exc:
            raise ConnectorUnavailable(str(exc)) from exc

    def _keys(self, namespace):
        dirs = [self.root / namespace] if namespace is not None else [
            p for p in self.root.iterdir() if p.is_dir()
        ]
        keys = []
        for d in dirs:
            if not d.is_dir():
                continue
            for entry in os.scandir(d):
                if entry.name.startswith(_TMP_PREFIX) or not entry.is_file():
                    continue
                try:
                    keys.append(StoreKey(d.name, entry.name))
                except ValueError:
                    continue
        return keys
