"""``bench`` command line.

    bench <mode> --sizes ... --tasks N --workers N --reps K --proxy on|off
          --threshold B --connector <config path or url> --seed S --out results.csv

Exit codes: 0 success, 2 verification failure, 3 engine failure.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys

from ..connectors import ConnectorConfig
from ..errors import ConfigError, ProxyFlowError
from .runner import BenchConfig, VerificationFailure, run
from .summary import (
    format_table, read_records_csv, summarize, write_records_csv, write_summary_csv,
)

EXIT_OK, EXIT_VERIFY, EXIT_ENGINE = 0, 2, 3

_UNITS = {"": 1, "b": 1, "k": 10**3, "kb": 10**3, "m": 10**6, "mb": 10**6,
          "g": 10**9, "gb": 10**9, "kib": 2**10, "mib": 2**20, "gib": 2**30}


def parse_size(text: str) -> int:
    """``"1kB"`` -> 1000, ``"1MiB"`` -> 1048576, ``"512"`` -> 512."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([A-Za-z]*)\s*", text)
    if not m or m.group(2).lower() not in _UNITS:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}")
    return int(float(m.group(1)) * _UNITS[m.group(2).lower()])


def _size_list(text: str) -> list[int]:
    return [parse_size(s) for s in text.split(",") if s.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="mode", required=True)
    defaults = {
        "roundtrip": dict(sizes="1kB,10kB,100kB,1MB", workers="4", reps=20, tasks=500),
        "throughput": dict(sizes="1MB", workers="1,2,4,8", reps=3, tasks=500),
        "cholesky": dict(sizes="0", workers="4", reps=3, tasks=0),
    }
    for mode, d in defaults.items():
        p = sub.add_parser(mode)
        p.add_argument("--sizes", type=_size_list, default=_size_list(d["sizes"]),
                       help="comma-separated payload sizes (1kB, 1MB, 1MiB ...)")
        p.add_argument("--tasks", type=int, default=d["tasks"])
        p.add_argument("--workers", type=_int_list, default=_int_list(d["workers"]),
                       help="worker count, or comma-separated counts for throughput")
        p.add_argument("--reps", type=int, default=d["reps"])
        p.add_argument("--proxy", choices=("on", "off", "both"), default="both")
        p.add_argument("--threshold", type=parse_size, default=1000)
        p.add_argument("--connector", help="connector config file or url "
                                           "(default: filesystem under /dev/shm)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=f"{mode}.csv")
        p.add_argument("--summary", help="also write the paired summary CSV here")
        p.add_argument("--threads", action="store_true",
                       help="run scheduler and workers as threads of this process")
        if mode == "cholesky":
            p.add_argument("--order", type=int, default=256)
            p.add_argument("--tile", type=int, default=64)
    p = sub.add_parser("summarize", help="pair off/on rows of a results CSV")
    p.add_argument("results")
    p.add_argument("--out")
    p = sub.add_parser("codec", help="time the dense and generic codecs")
    p.add_argument("--sizes", type=_size_list, default=_size_list("1kB,10kB,100kB,1MB,8MB"))
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", default="codec.csv")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> BenchConfig:
    return BenchConfig(
        mode=args.mode,
        payload_sizes=args.sizes,
        n_tasks=args.tasks,
        n_workers=args.workers,
        repetitions=args.reps,
        proxy=("off", "on") if args.proxy == "both" else (args.proxy,),
        threshold_bytes=args.threshold,
        connector=ConnectorConfig.parse(args.connector) if args.connector else None,
        seed=args.seed,
        matrix_order=getattr(args, "order", 256),
        tile_size=getattr(args, "tile", 64),
        processes=not args.threads,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.mode == "summarize":
        rows = summarize(read_records_csv(args.results))
        if args.out:
            write_summary_csv(rows, args.out)
        print(format_table(rows))
        return EXIT_OK
    if args.mode == "codec":
        from .. import serial
        from ..codecbench import bench_codec, write_csv

        rows = [r for cid in (serial.DENSE_ID, serial.GENERIC_ID)
                for r in bench_codec(cid, args.sizes, reps=args.reps)]
        write_csv(rows, args.out)
        for r in rows:
            print(f"codec={r.codec_id} size={r.size_bytes} encode={r.encode_ns_p50}ns "
                  f"decode={r.decode_ns_p50}ns copies={r.copies}")
        return EXIT_OK
    try:
        cfg = _config(args)
    except (ValueError, ConfigError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    try:
        records = run(cfg)
    except VerificationFailure as exc:
        print(f"bench: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ProxyFlowError, OSError, TimeoutError, RuntimeError) as exc:
        print(f"bench: engine failure: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    write_records_csv(records, args.out)
    rows = summarize(records)
    if args.summary:
        write_summary_csv(rows, args.summary)
    print(format_table(rows))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
