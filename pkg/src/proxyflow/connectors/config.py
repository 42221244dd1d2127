"""Connector configuration and the per-process connector resolver.

Config file schema (TOML, a ``[connector]`` table or a bare top level)::

    [connector]
    kind = "filesystem"          # memory | filesystem | remote_kv | multi
    root = "/dev/shm/proxyflow"  # filesystem
    # segment, capacity_bytes    # memory
    # host, port, timeout        # remote_kv (or address = "host:port")

    # kind = "multi":
    # default = "disk"
    # rules = [{max_size = 10000, connector = "mem"}]
    # [connector.connectors.mem]
    # kind = "memory"

Connector URLs are the compact form factories carry: ``memory://segment``,
``file:///abs/root``, ``kv://host:port``. A multi connector's URL carries
its policy and sub-connector URLs as a query string.
"""

from __future__ import annotations

import os
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping
from urllib.parse import parse_qs, unquote, urlsplit

from ..errors import ConfigError
from .base import Connector
from .filesystem import FilesystemConnector
from .kv import RemoteKVConnector
from .memory import MemoryConnector
from .multi import MultiConnector, RoutingPolicy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("memory", "filesystem", "remote_kv", "multi")

_ALLOWED = {
    "memory": {"segment", "capacity_bytes"},
    "filesystem": {"root"},
    "remote_kv": {"host", "port", "address", "timeout"},
    "multi": {"default", "rules"},
}
_REQUIRED = {"memory": set(), "filesystem": {"root"}, "remote_kv": set(), "multi": {"default"}}


def _int_param(params, name, default=None):
    if name not in params:
        return default
    try:
        return int(params[name])
    except ValueError:
        raise ConfigError(f"parameter {name!r} must be an integer, got {params[name]!r}") from None


def _parse_rules(text: str) -> tuple[tuple[int, str], ...]:
    rules = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        size, sep, cid = item.partition(":")
        if not sep:
            raise ConfigError(f"routing rule {item!r} is not 'max_size:connector'")
        try:
            rules.append((int(size), cid))
        except ValueError:
            raise ConfigError(f"routing rule size {size!r} is not an integer") from None
    return tuple(rules)


@dataclass(frozen=True)
class ConnectorConfig:
    """Named connector configuration, validated at construction.

    ``params`` is a string map; ``connectors`` only applies to ``multi``.
    """

    kind: str
    params: Mapping[str, str] = field(default_factory=dict)
    connectors: Mapping[str, "ConnectorConfig"] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown connector kind {self.kind!r}; expected one of {KINDS}")
        params = {str(k): str(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", params)
        unknown = set(params) - _ALLOWED[self.kind]
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameters {sorted(unknown)}")
        missing = _REQUIRED[self.kind] - set(params)
        if missing:
            raise ConfigError(f"{self.kind} connector requires {sorted(missing)}")
        if self.kind == "remote_kv":
            self._kv_address()
            _int_param(params, "timeout")
        if self.kind == "memory":
            _int_param(params, "capacity_bytes")
        if self.kind == "multi":
            if not self.connectors:
                raise ConfigError("multi connector needs sub-connectors")
            self.policy()  # validates rule ordering and names
            missing = self.policy().connector_ids() - set(self.connectors)
            if missing:
                raise ConfigError(f"routing policy names unknown connectors {sorted(missing)}")
        elif self.connectors:
            raise ConfigError("only multi connectors take sub-connectors")

    def _kv_address(self) -> tuple[str, int]:
        p = self.params
        if "address" in p:
            host, sep, port = p["address"].rpartition(":")
            if not sep:
                raise ConfigError(f"address {p['address']!r} is not host:port")
        else:
            host, port = p.get("host", "127.0.0.1"), p.get("port", "")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"remote_kv port {port!r} is not an integer") from None

    def policy(self) -> RoutingPolicy:
        return RoutingPolicy(_parse_rules(self.params.get("rules", "")), self.params["default"])

    def build(self) -> Connector:
        p = self.params
        if self.kind == "memory":
            return MemoryConnector(p.get("segment", "default"), _int_param(p, "capacity_bytes"))
        if self.kind == "filesystem":
            return FilesystemConnector(p["root"])
        if self.kind == "remote_kv":
            host, port = self._kv_address()
            return RemoteKVConnector(host, port, timeout=float(p.get("timeout", 30)))
        subs = {name: cfg.build() for name, cfg in self.connectors.items()}
        return MultiConnector(self.policy(), subs)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ConnectorConfig":
        data = dict(data)
        try:
            kind = data.pop("kind")
        except KeyError:
            raise ConfigError("connector config needs a 'kind'") from None
        subs = data.pop("connectors", {}) or {}
        rules = data.get("rules")
        if isinstance(rules, list):
            try:
                data["rules"] = ",".join(f"{int(r['max_size'])}:{r['connector']}" for r in rules)
            except (KeyError, TypeError, ValueError):
                raise ConfigError("rules must be tables with max_size and connector") from None
        return cls(
            kind=kind,
            params=data,
            connectors={name: cls.from_mapping(sub) for name, sub in subs.items()},
        )

    @classmethod
    def from_url(cls, url: str) -> "ConnectorConfig":
        parts = urlsplit(url)
        if parts.scheme == "memory":
            return cls("memory", {"segment": parts.netloc or "default"})
        if parts.scheme == "file":
            return cls("filesystem", {"root": unquote(parts.path)})
        if parts.scheme == "kv":
            return cls("remote_kv", {"address": parts.netloc})
        if parts.scheme == "multi":
            query = parse_qs(parts.query, keep_blank_values=True)
            params = {k: v[0] for k, v in query.items() if k in ("default", "rules")}
            subs = {k[2:]: cls.from_url(v[0]) for k, v in query.items() if k.startswith("c.")}
            return cls("multi", params, subs)
        raise ConfigError(f"cannot build a connector from url {url!r}")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ConnectorConfig":
        with open(path, "rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(data.get("connector", data))

    @classmethod
    def parse(cls, spec: str) -> "ConnectorConfig":
        """Accept either a connector URL or the path of a config file."""
        if "://" in spec:
            return cls.from_url(spec)
        if not Path(spec).is_file():
            raise ConfigError(f"{spec!r} is neither a connector url nor a config file")
        return cls.load(spec)


_live: dict[str, Connector] = {}
_live_lock = threading.Lock()


def register_connector(connector: Connector) -> None:
    """Make a live connector the one factories in this process resolve
    through when they name its url."""
    with _live_lock:
        _live[connector.url] = connector
        if isinstance(connector, MultiConnector):
            for sub in connector.connectors.values():
                _live[sub.url] = sub


def connector_from_url(url: str) -> Connector:
    """Live connector for ``url``, constructing (and caching) one if this
    process has none open."""
    with _live_lock:
        c = _live.get(url)
        if c is not None and not c.closed:
            return c
        c = ConnectorConfig.from_url(url).build()
        _live[url] = c
        if isinstance(c, MultiConnector):
            for sub in c.connectors.values():
                live = _live.get(sub.url)
                if live is None or live.closed:
                    _live[sub.url] = sub
        return c
