"""Benchmark drivers for the round-trip, throughput and Cholesky experiments."""

from __future__ import annotations

import concurrent.futures as cf
import logging
import os
import shutil
import statistics
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..connectors import ConnectorConfig, Connector
from ..engine import Client, LocalCluster
from ..executor import OwnedProxy, ProxyPolicy, StoreExecutor
from ..proxy import extract
from ..store import Store
from . import workloads

log = logging.getLogger(__name__)

MODES = ("roundtrip", "throughput", "cholesky")
TIMING_MODES = MODES


class VerificationFailure(Exception):
    """A benchmark produced wrong results or leaked stored objects."""


@dataclass
class BenchConfig:
    mode: str
    payload_sizes: list[int] = field(default_factory=lambda: [1_000, 10_000, 100_000, 1_000_000])
    n_tasks: int = 500
    n_workers: list[int] = field(default_factory=lambda: [4])
    repetitions: int = 5
    proxy: tuple[str, ...] = ("off", "on")
    threshold_bytes: int = 1_000
    connector: ConnectorConfig | None = None
    seed: int = 0
    matrix_order: int = 256
    tile_size: int = 64
    processes: bool = True
    warmup: int = 2  # untimed tasks per worker before each measured series

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in TIMING_MODES and self.repetitions < 3:
            raise ValueError("timing modes need at least 3 repetitions")
        if any(p not in ("off", "on") for p in self.proxy):
            raise ValueError("proxy modes are 'off' and 'on'")
        if any(n < 1 for n in self.n_workers):
            raise ValueError("worker counts must be positive")
        if any(s < 0 for s in self.payload_sizes):
            raise ValueError("payload sizes must be non-negative")


@dataclass(frozen=True)
class BenchRecord:
    mode: str
    proxy: str
    payload_bytes: int
    n_workers: int
    metric_name: str
    value: float
    unit: str
    repetition: int

    def sort_key(self):
        return (self.mode, self.payload_bytes, self.n_workers, self.proxy,
                self.repetition < 0, self.repetition, self.metric_name)


AGGREGATE = -1  # repetition value of summary rows (medians, totals)


def _default_connector() -> tuple[ConnectorConfig, str]:
    base = "/dev/shm" if os.path.isdir("/dev/shm") else None
    root = tempfile.mkdtemp(prefix="proxyflow-bench-", dir=base)
    return ConnectorConfig("filesystem", {"root": root}), root


class Deployment:
    """A local cluster, a client and a store shared by both proxy modes."""

    def __init__(self, cfg: BenchConfig, n_workers: int):
        self.cfg = cfg
        self._tmp = None
        self.cluster = self.client = self.store = None
        try:
            connector_cfg = cfg.connector
            if connector_cfg is None:
                connector_cfg, self._tmp = _default_connector()
            self.cluster = LocalCluster(n_workers, processes=cfg.processes).start()
            self.client = Client(self.cluster.address)
            self.cluster.wait_for_workers(self.client)
            connector: Connector = connector_cfg.build()
            self.store = Store(f"bench-{os.getpid()}", connector)
        except BaseException:
            self.close()
            raise

    def executor(self, proxy: str) -> StoreExecutor:
        return StoreExecutor(self.client, self.store, ProxyPolicy(self.cfg.threshold_bytes),
                             enabled=(proxy == "on"))

    def census(self) -> int:
        return len(self.store.keys())

    def close(self) -> None:
        for part in (self.client, self.cluster, self.store):
            if part is not None:
                part.close()
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)


@contextmanager
def deployment(cfg: BenchConfig, n_workers: int):
    d = Deployment(cfg, n_workers)
    try:
        yield d
    finally:
        d.close()


def _take(value) -> object:
    """Materialize a task result and free its stored copy."""
    data = extract(value)
    if isinstance(value, OwnedProxy):
        value.release()
    return data


def _audit(d: Deployment, records: list, mode: str, proxy: str, size: int, n: int) -> None:
    leaked = d.census()
    records.append(BenchRecord(mode, proxy, size, n, "leaked_keys", leaked, "keys", AGGREGATE))
    if leaked:
        raise VerificationFailure(f"{leaked} stored objects left behind after {mode}/{proxy}")


def run_roundtrip(cfg: BenchConfig) -> list[BenchRecord]:
    """Median submit-to-result time of no-op tasks per payload size.

    Proxy modes alternate within each repetition, first one then the other
    going first, so slow drift of the host affects both equally. Scheduler counters are read around every task
    (STATS traffic is not counted), so each task's reported byte count is
    checked against the scheduler's own totals.
    """
    records: list[BenchRecord] = []
    n = cfg.n_workers[0]
    with deployment(cfg, n) as d:
        for size in cfg.payload_sizes:
            executors = {proxy: d.executor(proxy) for proxy in cfg.proxy}
            rtts = {proxy: [] for proxy in executors}
            sched = {proxy: [] for proxy in executors}
            try:
                for proxy, ex in executors.items():
                    for w in range(cfg.warmup * n):
                        _take(ex.submit("noop", workloads.payload(cfg.seed, size, 1, w),
                                        size, cfg.seed).result())
                for rep in range(cfg.repetitions):
                    data = workloads.payload(cfg.seed, size, 0, rep)
                    order = list(executors.items())
                    for proxy, ex in (order if rep % 2 == 0 else order[::-1]):
                        before = d.client.stats()
                        t0 = time.perf_counter()
                        fut = ex.submit("noop", data, size, cfg.seed + rep)
                        value = fut.result()
                        result = extract(value)
                        rtt = time.perf_counter() - t0  # cleanup below is untimed
                        _take(value)
                        delta = (d.client.stats() - before).bytes_total
                        if len(result) != size:
                            raise VerificationFailure(
                                f"noop returned {len(result)} bytes, expected {size}")
                        per_task = fut.task_result.scheduler_bytes
                        if per_task != delta:
                            raise VerificationFailure(
                                f"task reported {per_task} scheduler bytes, counters moved {delta}")
                        rtts[proxy].append(rtt)
                        sched[proxy].append(per_task)
                        records.append(BenchRecord("roundtrip", proxy, size, n, "rtt", rtt, "s", rep))
                        records.append(BenchRecord("roundtrip", proxy, size, n, "scheduler_bytes",
                                                   per_task, "B", rep))
            finally:
                for ex in executors.values():
                    ex.shutdown()
            for proxy in executors:
                records.append(BenchRecord("roundtrip", proxy, size, n, "rtt_median",
                                           statistics.median(rtts[proxy]), "s", AGGREGATE))
                records.append(BenchRecord("roundtrip", proxy, size, n, "scheduler_bytes_per_task",
                                           statistics.median(sched[proxy]), "B", AGGREGATE))
                records.append(BenchRecord("roundtrip", proxy, size, n, "scheduler_bytes_total",
                                           sum(sched[proxy]), "B", AGGREGATE))
            for proxy in executors:
                _audit(d, records, "roundtrip", proxy, size, n)
    return sorted(records, key=BenchRecord.sort_key)


def run_throughput(cfg: BenchConfig) -> list[BenchRecord]:
    """Tasks per second with a sliding window of ``n_workers`` tasks in
    flight; each task consumes and produces one payload. Proxy modes
    alternate within each repetition, as in :func:`run_roundtrip`."""
    records: list[BenchRecord] = []
    size = cfg.payload_sizes[0]
    for n in cfg.n_workers:
        with deployment(cfg, n) as d:
            for proxy in cfg.proxy:
                with d.executor(proxy) as ex:
                    for w in range(cfg.warmup * n):
                        _take(ex.submit("noop", workloads.payload(cfg.seed, size, 1, w),
                                        size, cfg.seed).result())
            rates: dict[str, list[float]] = {proxy: [] for proxy in cfg.proxy}
            for rep in range(cfg.repetitions):
                for proxy in (cfg.proxy if rep % 2 == 0 else cfg.proxy[::-1]):
                    before = d.client.stats()
                    with d.executor(proxy) as ex:
                        rate, sched_total, done = _sliding_window(ex, cfg, n, size, rep)
                    delta = (d.client.stats() - before).bytes_total
                    if sched_total != delta:
                        raise VerificationFailure(
                            f"per-task scheduler bytes {sched_total} != scheduler totals {delta}")
                    rates[proxy].append(rate)
                    records.append(BenchRecord("throughput", proxy, size, n, "throughput",
                                               rate, "tasks/s", rep))
                    records.append(BenchRecord("throughput", proxy, size, n,
                                               "scheduler_bytes_per_task",
                                               sched_total / max(done, 1), "B", rep))
            for proxy in cfg.proxy:
                records.append(BenchRecord("throughput", proxy, size, n, "throughput_median",
                                           statistics.median(rates[proxy]), "tasks/s", AGGREGATE))
                _audit(d, records, "throughput", proxy, size, n)
    return sorted(records, key=BenchRecord.sort_key)


def _sliding_window(ex: StoreExecutor, cfg: BenchConfig, n: int, size: int, rep: int):
    submitted = 0
    sched_total = 0

    def launch():
        nonlocal submitted
        data = workloads.payload(cfg.seed, size, 2, rep, submitted)
        submitted += 1
        return ex.submit("noop", data, size, cfg.seed + submitted)

    t0 = time.perf_counter()
    pending = {launch() for _ in range(min(n, cfg.n_tasks))}
    done_count = 0
    while pending:
        done, pending = cf.wait(pending, return_when=cf.FIRST_COMPLETED)
        for fut in done:
            value = fut.result()
            if isinstance(value, OwnedProxy):
                value.release()
            sched_total += fut.task_result.scheduler_bytes
            done_count += 1
            if submitted < cfg.n_tasks:
                pending.add(launch())
    elapsed = time.perf_counter() - t0
    return done_count / elapsed, sched_total, done_count


def run_cholesky(cfg: BenchConfig) -> list[BenchRecord]:
    """Tiled Cholesky through the engine; records makespan and checks the
    factor against the in-process tiled run and the residual bound."""
    records: list[BenchRecord] = []
    order, b = cfg.matrix_order, cfg.tile_size
    nt = order // b
    a = workloads.make_spd(order, cfg.seed)
    reference = workloads.cholesky_local(a, b)
    n = cfg.n_workers[0]
    with deployment(cfg, n) as d:
        for proxy in cfg.proxy:
            times = []
            for rep in range(cfg.repetitions):
                with d.executor(proxy) as ex:
                    t0 = time.perf_counter()
                    tiles = engine_cholesky(ex, a, b)
                    times.append(time.perf_counter() - t0)
                records.append(BenchRecord("cholesky", proxy, order, n, "makespan", times[-1], "s", rep))
                mismatched = sum(not np.array_equal(tiles[ij], reference[ij]) for ij in reference)
                res = workloads.residual(workloads.assemble_lower(tiles, nt, b), a)
                records.append(BenchRecord("cholesky", proxy, order, n, "residual", res, "ratio", rep))
                records.append(BenchRecord("cholesky", proxy, order, n, "tile_mismatches",
                                           mismatched, "tiles", rep))
                if not res < 1e-8:
                    raise VerificationFailure(f"cholesky residual {res:.3e} exceeds 1e-8")
                if mismatched:
                    raise VerificationFailure(f"{mismatched} tiles differ from the in-process factor")
            records.append(BenchRecord("cholesky", proxy, order, n, "makespan_median",
                                       statistics.median(times), "s", AGGREGATE))
            _audit(d, records, "cholesky", proxy, order, n)
    return sorted(records, key=BenchRecord.sort_key)


def engine_cholesky(ex: StoreExecutor, a: np.ndarray, b: int) -> dict:
    """Factor ``a`` through ``ex``; returns materialized lower tiles."""
    nt = a.shape[0] // b

    def run(calls):
        futures = [ex.submit(name, *args) for name, args in calls]
        return [f.result() for f in futures]

    def dispose(value):
        if isinstance(value, OwnedProxy):
            value.release()

    tiles = workloads.tiled_cholesky(workloads.split_tiles(a, b), nt, run, dispose)
    return {ij: np.array(_take(v)) for ij, v in tiles.items()}


RUNNERS = {"roundtrip": run_roundtrip, "throughput": run_throughput, "cholesky": run_cholesky}


def run(cfg: BenchConfig) -> list[BenchRecord]:
    return RUNNERS[cfg.mode](cfg)
