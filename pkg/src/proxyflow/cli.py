"""``proxyflow`` command line: run a scheduler, a worker or a kv server.

    proxyflow scheduler --host 0.0.0.0 --port 8786
    proxyflow worker --scheduler host:8786 --slots 2 --import mypackage.tasks
    proxyflow kv-server --port 6380 --capacity 1GB

Flags override values from ``--config``.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EngineConfig, parse_address
from .errors import ConfigError, ProxyFlowError


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxyflow", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scheduler", help="run the central scheduler")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    p = sub.add_parser("worker", help="run a worker")
    p.add_argument("--config")
    p.add_argument("--scheduler", help="host:port")
    p.add_argument("--slots", type=int)
    p.add_argument("--id", dest="worker_id")
    p.add_argument("--import", dest="imports", action="append", default=[],
                   help="module that registers task functions (repeatable)")

    p = sub.add_parser("kv-server", help="run the remote key-value store")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=6380)
    p.add_argument("--capacity", help="capacity in bytes (suffixes kB, MB, GiB ...)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "kv-server":
            return _kv_server(args)
        cfg = EngineConfig.load(args.config) if args.config else EngineConfig()
        if args.command == "scheduler":
            from .engine import run_scheduler

            host = args.host or cfg.scheduler[0]
            port = cfg.scheduler[1] if args.port is None else args.port
            run_scheduler(host, port, ready=lambda addr: print(
                f"scheduler listening on {addr[0]}:{addr[1]}", flush=True))
            return 0
        from .engine import run_worker

        address = parse_address(args.scheduler) if args.scheduler else cfg.scheduler
        cfg.imports = list(cfg.imports) + list(args.imports)
        cfg.check_functions()
        run_worker(address, args.slots or cfg.slots, args.worker_id, tuple(cfg.imports))
        return 0
    except (ConfigError, ProxyFlowError, OSError) as exc:
        print(f"proxyflow: {exc}", file=sys.stderr)
        return 1


def _kv_server(args) -> int:
    from .bench.cli import parse_size
    from .connectors import KVServer

    capacity = parse_size(args.capacity) if args.capacity else None
    server = KVServer(args.host, args.port, capacity)
    host, port = server.address
    print(f"kv server listening on kv://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
