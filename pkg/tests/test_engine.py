from __future__ import annotations

import threading
import time

import numpy as np
import pytest

from proxyflow import serial
from proxyflow.bench import workloads
from proxyflow.engine import ArgEnvelope, LocalCluster, WorkerExit, register, task_key
from proxyflow.engine.protocol import (
    MAX_ATTEMPTS, SUBMIT, SchedulerStats, TaskSpec, decode_message, encode_message,
)
from proxyflow.errors import ProtocolError, TaskError, UnknownFunction
from proxyflow.proxy import is_resolved

calls = {"n": 0}
calls_lock = threading.Lock()


@register("test.counted")
def counted(x):
    with calls_lock:
        calls["n"] += 1
    time.sleep(0.01)
    return x * 2


@register("test.crash")
def crash():
    raise WorkerExit()


@register("test.fail")
def fail(msg):
    raise ValueError(msg)


@register("test.whoami")
def whoami(_):
    time.sleep(0.05)
    return threading.current_thread().name.rsplit("_", 1)[0]


def test_sum(engine):
    _, client = engine
    assert client.submit("sum", [1, 2, 3]).result() == 6


def test_identity_round_trips_structures(engine):
    _, client = engine
    value = {"a": [1, 2.5, None], "b": b"\x00\xff"}
    assert client.submit("identity", value).result() == value


def test_registered_callable_as_function_id(engine):
    _, client = engine
    assert client.submit(counted, 21).result() == 42


def test_task_result_accounting(engine):
    _, client = engine
    fut = client.submit("len", b"abc")
    assert fut.result() == 3
    tr = fut.task_result
    assert tr.ok and tr.attempts == 1 and tr.worker_id.startswith("worker-")
    assert tr.timings.total_ns >= tr.timings.exec_ns >= 0
    assert tr.scheduler_bytes > 0


# -- task keys -------------------------------------------------------------

def test_task_key_deterministic(store):
    spec = lambda: TaskSpec("sum", [ArgEnvelope.inline([1, 2])])  # noqa: E731
    assert task_key(spec()) == task_key(spec())
    assert task_key(spec()) != task_key(TaskSpec("len", [ArgEnvelope.inline([1, 2])]))
    assert task_key(spec()) != task_key(TaskSpec("sum", [ArgEnvelope.inline([2, 1])]))


def test_task_key_same_inline_or_proxied(store):
    value = list(range(100))
    p = store.proxy(value)
    inline = task_key(TaskSpec("sum", [ArgEnvelope.inline(value)]))
    proxied = task_key(TaskSpec("sum", [ArgEnvelope.from_proxy(p)]))
    assert inline == proxied
    assert not is_resolved(p)
    assert store.connector.key_gets[p.key] == 0


# -- pure cache ------------------------------------------------------------

def test_pure_cache_dispatches_once(engine):
    _, client = engine
    before = client.stats()
    calls["n"] = 0
    futures = [client.submit("test.counted", 5, pure=True) for _ in range(100)]
    assert [f.result() for f in futures] == [10] * 100
    delta = client.stats() - before
    assert delta.tasks_dispatched == 1 and delta.cache_hits == 99
    assert calls["n"] == 1
    # later submissions hit the stored result
    assert client.submit("test.counted", 5, pure=True).result() == 10
    assert calls["n"] == 1


def test_impure_runs_every_time(engine):
    _, client = engine
    calls["n"] = 0
    assert client.submit("test.counted", 1).result() == 2
    assert client.submit("test.counted", 1).result() == 2
    assert calls["n"] == 2


def test_failures_are_not_cached(engine):
    _, client = engine
    for _ in range(2):
        with pytest.raises(TaskError, match="ValueError: boom"):
            client.submit("test.fail", "boom", pure=True).result()
    assert client.stats().cache_hits == 0


# -- distribution and faults ----------------------------------------------

def test_tasks_spread_over_workers(engine):
    _, client = engine
    futures = [client.submit("test.whoami", i) for i in range(10)]
    assert {f.result() for f in futures} == {"worker-0", "worker-1"}


def test_worker_loss_is_retried_once(make_cluster):
    _, client = make_cluster(n_workers=2)
    fut = client.submit("test.crash")
    with pytest.raises(TaskError, match="worker lost"):
        fut.result()
    assert fut.task_result.attempts == MAX_ATTEMPTS == 2


def test_retry_succeeds_on_surviving_worker(make_cluster):
    cluster, client = make_cluster(n_workers=1)
    flag = {"crashed": False}

    @register("test.crash_once")
    def crash_once(x):
        if not flag["crashed"]:
            flag["crashed"] = True
            raise WorkerExit()
        return x

    fut = client.submit("test.crash_once", 7)
    cluster.add_worker("worker-spare")
    assert fut.result() == 7
    assert fut.task_result.attempts == 2


def test_unknown_function(engine):
    _, client = engine
    with pytest.raises(UnknownFunction):
        client.submit("no.such.function", 1)
    client.validate = False
    with pytest.raises(UnknownFunction):
        client.submit("no.such.function", 1).result()


def test_task_exceptions_surface(engine):
    _, client = engine
    with pytest.raises(TaskError, match="oops"):
        client.submit("test.fail", "oops").result()


# -- scheduler byte accounting -------------------------------------------

def test_stats_start_at_zero(engine):
    _, client = engine
    s = client.stats()
    assert (s.tasks_dispatched, s.bytes_received, s.bytes_sent, s.cache_hits) == (0, 0, 0, 0)


def test_inline_megabyte_crosses_scheduler(engine):
    _, client = engine
    blob = bytes(1_000_000)
    before = client.stats()
    assert client.submit("len", blob).result() == 1_000_000
    delta = client.stats() - before
    assert delta.bytes_received >= 1_000_000 and delta.bytes_sent >= 1_000_000


def test_proxied_megabyte_stays_off_scheduler(engine, store):
    _, client = engine
    p = store.proxy(bytes(1_000_000))
    before = client.stats()
    fut = client.submit("len", p)
    assert fut.result() == 1_000_000
    delta = client.stats() - before
    assert delta.bytes_total < 10_000
    assert fut.task_result.scheduler_bytes == delta.bytes_total


def test_stats_arithmetic():
    a = SchedulerStats(3, 100, 50, 1)
    assert (a - SchedulerStats(1, 10, 5, 1)) == SchedulerStats(2, 90, 45, 0)
    assert a.bytes_total == 150
    assert SchedulerStats.from_wire(a.to_wire()) == a


def test_message_framing():
    raw = b"".join(encode_message(SUBMIT, {"id": 1}))
    assert raw[0] == SUBMIT and decode_message(raw) == (SUBMIT, {"id": 1})
    with pytest.raises(ProtocolError):
        decode_message(b"")
    with pytest.raises(ProtocolError):
        decode_message(bytes([99]) + serial.encode_generic({}))


# -- lifecycle -------------------------------------------------------------

def test_shutdown_cluster_stops_everything():
    from proxyflow.engine import Client

    cluster = LocalCluster(2).start()
    client = Client(cluster.address, timeout=30)
    cluster.wait_for_workers(client)
    assert client.submit("sum", [1]).result() == 1
    client.shutdown_cluster()
    cluster.scheduler.join(10)
    deadline = time.monotonic() + 10
    while any(w.alive for w in cluster.workers) and time.monotonic() < deadline:
        time.sleep(0.05)
    assert not any(w.alive for w in cluster.workers)
    client.close()
    cluster.close()


def test_cholesky_kernels_match_local(engine):
    _, client = engine
    a = workloads.make_spd(64, 1)
    tiles = workloads.split_tiles(a, 32)

    def run(calls_):
        futures = [client.submit(name, *args) for name, args in calls_]
        return [np.asarray(f.result()) for f in futures]

    remote = workloads.tiled_cholesky(tiles, 2, run)
    local = workloads.cholesky_local(a, 32)
    assert all(np.array_equal(remote[ij], local[ij]) for ij in local)
