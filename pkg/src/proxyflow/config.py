"""Engine and executor configuration file.

One TOML file configures the whole deployment::

    [engine]
    scheduler = "127.0.0.1:8786"
    slots = 2
    functions = ["sum", "noop"]   # must be registered on every worker
    imports = ["mypackage.tasks"] # modules whose import registers functions
    timeout = 300

    [executor]
    threshold_bytes = 1000
    store = "default"

    [connector]
    kind = "filesystem"
    root = "/dev/shm/proxyflow"
"""

from __future__ import annotations

import importlib
import os
import sys
from dataclasses import dataclass, field

from .connectors import ConnectorConfig
from .errors import ConfigError, UnknownFunction

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


def parse_address(text: str, default_port: int = 8786) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text or "127.0.0.1", default_port
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ConfigError(f"bad address {text!r}; expected host:port") from None


@dataclass
class EngineConfig:
    scheduler: tuple[str, int] = ("127.0.0.1", 8786)
    slots: int = 1
    functions: list[str] = field(default_factory=list)
    imports: list[str] = field(default_factory=list)
    timeout: float = 300.0
    threshold_bytes: int = 1000
    store: str = "default"
    connector: ConnectorConfig | None = None

    def __post_init__(self):
        if self.slots < 1:
            raise ConfigError("slots must be at least 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.threshold_bytes < 0:
            raise ConfigError("threshold_bytes must be non-negative")

    def check_functions(self) -> None:
        """Import ``imports`` and fail if a listed function is missing."""
        from .engine.functions import is_registered

        for mod in self.imports:
            importlib.import_module(mod)
        missing = [f for f in self.functions if not is_registered(f)]
        if missing:
            raise UnknownFunction(f"functions not registered: {missing}")

    @classmethod
    def from_mapping(cls, data: dict) -> "EngineConfig":
        engine = dict(data.get("engine", {}))
        executor = dict(data.get("executor", {}))
        known = {"scheduler", "slots", "functions", "imports", "timeout"}
        if set(engine) - known:
            raise ConfigError(f"unknown [engine] keys {sorted(set(engine) - known)}")
        if set(executor) - {"threshold_bytes", "store"}:
            raise ConfigError(f"unknown [executor] keys {sorted(set(executor) - {'threshold_bytes', 'store'})}")
        try:
            return cls(
                scheduler=parse_address(str(engine.get("scheduler", "127.0.0.1:8786"))),
                slots=int(engine.get("slots", 1)),
                functions=list(engine.get("functions", [])),
                imports=list(engine.get("imports", [])),
                timeout=float(engine.get("timeout", 300)),
                threshold_bytes=int(executor.get("threshold_bytes", 1000)),
                store=str(executor.get("store", "default")),
                connector=(ConnectorConfig.from_mapping(data["connector"])
                           if "connector" in data else None),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EngineConfig":
        with open(path, "rb") as f:
            try:
                return cls.from_mapping(tomllib.load(f))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
