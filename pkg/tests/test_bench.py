from __future__ import annotations

import argparse
import csv
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from proxyflow.bench import (
    AGGREGATE, BenchConfig, BenchRecord, relative_improvement, run_cholesky, run_roundtrip,
    run_throughput, summarize,
)
from proxyflow.bench import workloads
from proxyflow.bench.cli import main, parse_size
from proxyflow.bench.summary import RECORD_COLUMNS, format_table, read_records_csv, write_records_csv
from proxyflow.config import EngineConfig, parse_address
from proxyflow.errors import ConfigError, UnknownFunction


def rec(proxy, value, metric="rtt_median", size=1000):
    return BenchRecord("roundtrip", proxy, size, 4, metric, value, "s", AGGREGATE)


# -- summary ---------------------------------------------------------------

def test_relative_improvement():
    assert relative_improvement(2.0, 1.0) == 0.5
    assert relative_improvement(1.0, 1.0) == 0.0
    assert relative_improvement(100.0, 150.0, higher_is_better=True) == 0.5
    assert relative_improvement(0.0, 0.0) == 0.0
    assert math.isnan(relative_improvement(0.0, 1.0))


def test_summary_pairs_and_gaps():
    rows = summarize([rec("off", 2.0), rec("on", 1.0), rec("off", 3.0, size=10),
                      BenchRecord("roundtrip", "on", 1000, 4, "rtt", 9.0, "s", 0)])
    by_size = {r.payload_bytes: r for r in rows}
    assert len(rows) == 2
    assert by_size[1000].improvement == 0.5
    assert by_size[10].improvement is None and by_size[10].proxied is None
    assert "gap" in format_table(rows) and "+50.0%" in format_table(rows)


def test_records_csv_round_trip(tmp_path):
    records = [rec("off", 2.0), rec("on", 1.5)]
    path = tmp_path / "r.csv"
    write_records_csv(records, path)
    with open(path, newline="") as f:
        assert tuple(next(csv.reader(f))) == RECORD_COLUMNS
    assert read_records_csv(path) == records


# -- workloads -------------------------------------------------------------

def test_payloads_deterministic():
    assert workloads.payload(0, 100, 3) == workloads.payload(0, 100, 3)
    assert workloads.payload(0, 100, 3) != workloads.payload(0, 100, 4)
    assert len(workloads.payload(1, 0)) == 0
    np.testing.assert_array_equal(workloads.make_spd(16, 2), workloads.make_spd(16, 2))


def test_spd_matrix_is_spd():
    a = workloads.make_spd(32, 0)
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.linalg.eigvalsh(a) > 0)


def test_tiled_cholesky_single_tile():
    a = workloads.make_spd(16, 0)
    tiles = workloads.cholesky_local(a, 16)
    np.testing.assert_array_equal(tiles[0, 0], np.linalg.cholesky(a))
    out = workloads.cholesky_local(np.array([[4.0]]), 1)
    assert out[0, 0].tolist() == [[2.0]]


def test_tiled_cholesky_residual():
    a = workloads.make_spd(128, 3)
    tiles = workloads.cholesky_local(a, 32)
    l = workloads.assemble_lower(tiles, 4, 32)
    assert workloads.residual(l, a) < 1e-12


def test_tile_size_must_divide_order():
    with pytest.raises(ValueError):
        workloads.split_tiles(np.eye(10), 3)


# -- runners (thread mode, small) ------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig("sideways")
    with pytest.raises(ValueError):
        BenchConfig("roundtrip", repetitions=2)
    with pytest.raises(ValueError):
        BenchConfig("roundtrip", proxy=("maybe",))


def test_roundtrip_small():
    cfg = BenchConfig("roundtrip", payload_sizes=[100, 20_000], n_workers=[2],
                      repetitions=3, processes=False)
    records = run_roundtrip(cfg)
    agg = {(r.proxy, r.payload_bytes, r.metric_name): r.value
           for r in records if r.repetition == AGGREGATE}
    assert agg["on", 20_000, "scheduler_bytes_per_task"] < agg["off", 20_000, "scheduler_bytes_per_task"]
    assert agg["on", 100, "leaked_keys"] == 0 and agg["on", 20_000, "leaked_keys"] == 0
    assert sum(r.metric_name == "rtt" for r in records) == 2 * 2 * 3


def test_throughput_small():
    cfg = BenchConfig("throughput", payload_sizes=[50_000], n_workers=[1, 2], n_tasks=12,
                      repetitions=3, processes=False)
    records = run_throughput(cfg)
    medians = [r for r in records if r.metric_name == "throughput_median"]
    assert len(medians) == 4 and all(r.value > 0 for r in medians)


def test_cholesky_small():
    cfg = BenchConfig("cholesky", n_workers=[2], repetitions=3, matrix_order=64,
                      tile_size=16, processes=False)
    records = run_cholesky(cfg)
    assert all(r.value == 0 for r in records if r.metric_name == "tile_mismatches")
    assert all(r.value < 1e-8 for r in records if r.metric_name == "residual")


def test_cholesky_single_tile_run():
    cfg = BenchConfig("cholesky", n_workers=[1], repetitions=3, matrix_order=32,
                      tile_size=32, processes=False, proxy=("on",))
    assert any(r.metric_name == "makespan_median" for r in run_cholesky(cfg))


# -- command line ----------------------------------------------------------

def test_parse_size():
    assert parse_size("1kB") == 1000
    assert parse_size("1MiB") == 1 << 20
    assert parse_size("512") == 512
    assert parse_size("2.5MB") == 2_500_000
    with pytest.raises(argparse.ArgumentTypeError):
        parse_size("lots")


def test_cli_roundtrip_and_summarize(tmp_path, capsys):
    out = tmp_path / "rt.csv"
    summary = tmp_path / "sum.csv"
    assert main(["roundtrip", "--sizes", "1kB,10kB", "--workers", "1", "--reps", "3",
                 "--threads", "--out", str(out), "--summary", str(summary)]) == 0
    table = capsys.readouterr().out
    assert "rtt_median" in table
    assert summary.read_text().startswith("mode,payload_bytes")
    assert main(["summarize", str(out)]) == 0
    assert "scheduler_bytes_per_task" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["roundtrip", "--reps", "1", "--threads", "--out", str(tmp_path / "x.csv")]) == 3
    assert main(["roundtrip", "--connector", "ftp://nowhere", "--threads",
                 "--out", str(tmp_path / "x.csv")]) == 3
    capsys.readouterr()


def test_cli_codec(tmp_path, capsys):
    out = tmp_path / "codec.csv"
    assert main(["codec", "--sizes", "1kB,8kB", "--reps", "3", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 4


def test_bench_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "proxyflow.bench.cli", "--help"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "roundtrip" in proc.stdout


# -- engine configuration ---------------------------------------------------

def test_engine_config_file(tmp_path):
    path = tmp_path / "engine.toml"
    path.write_text("""
[engine]
scheduler = "10.0.0.5:9000"
slots = 2
functions = ["sum", "noop"]

[executor]
threshold_bytes = 4096

[connector]
kind = "memory"
""")
    cfg = EngineConfig.load(path)
    assert cfg.scheduler == ("10.0.0.5", 9000) and cfg.slots == 2
    assert cfg.threshold_bytes == 4096 and cfg.connector.kind == "memory"
    cfg.check_functions()


def test_engine_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        EngineConfig.from_mapping({"engine": {"colour": 1}})
    with pytest.raises(ConfigError):
        EngineConfig.from_mapping({"engine": {"slots": 0}})
    with pytest.raises(UnknownFunction):
        EngineConfig(functions=["not.registered"]).check_functions()
    assert parse_address("host") == ("host", 8786)
    with pytest.raises(ConfigError):
        parse_address("host:port")


def test_proxyflow_cli_scheduler_and_worker(tmp_path):
    sched = subprocess.Popen([sys.executable, "-m", "proxyflow.cli", "scheduler", "--port", "0"],
                             stdout=subprocess.PIPE, text=True)
    try:
        line = sched.stdout.readline()
        assert line.startswith("scheduler listening on")
        address = line.split()[-1]
        worker = subprocess.Popen([sys.executable, "-m", "proxyflow.cli", "worker",
                                   "--scheduler", address, "--id", "w-cli"])
        try:
            from proxyflow.engine import Client

            with Client(parse_address(address), timeout=60) as client:
                deadline = time.monotonic() + 60
                while client.stats().extra.get("workers", 0) < 1:
                    assert time.monotonic() < deadline
                    time.sleep(0.05)
                assert client.submit("sum", [4, 5]).result() == 9
                client.shutdown_cluster()
            assert worker.wait(30) == 0
            assert sched.wait(30) == 0
        finally:
            worker.kill()
    finally:
        sched.kill()
