from __future__ import annotations

import csv
import statistics
import time
from dataclasses import astuple, dataclass, fields
from typing import Iterable

import numpy as np

from . import serial

CSV_COLUMNS = ("codec_id", "size_bytes", "encode_ns_p50", "decode_ns_p50", "copies")


@dataclass(frozen=True)
class CodecTiming:
    codec_id: int
    size_bytes: int
    encode_ns_p50: int
    decode_ns_p50: int
    copies: int


def make_sample(codec_id: int, size_bytes: int, seed: int = 0):
    """f64 values filling ``size_bytes`` element bytes: an ndarray for the
    dense codec, the equivalent list of floats for the generic codec."""
    values = np.random.default_rng(seed).random(size_bytes // 8)
    if codec_id == serial.DENSE_ID:
        return values
    return values.tolist()


def bench_codec(codec_id: int, sample_sizes: Iterable[int], reps: int = 5,
                seed: int = 0,
                registry: serial.SerializerRegistry | None = None) -> list[CodecTiming]:
    """Median encode/decode wall time per sample size, plus the number of
    element-buffer copies one encode+decode cycle performs."""
    registry = registry or serial.default_registry()
    registry[codec_id]  # raises if unregistered
    rows = []
    for size in sample_sizes:
        obj = make_sample(codec_id, size, seed)
        serial.copy_counter.reset()
        payload = registry.dumps(obj, codec_id)
        registry.loads(payload)
        copies = serial.copy_counter.reset()
        enc, dec = [], []
        for _ in range(reps):
            t0 = time.perf_counter_ns()
            payload = registry.dumps(obj, codec_id)
            t1 = time.perf_counter_ns()
            registry.loads(payload)
            t2 = time.perf_counter_ns()
            enc.append(t1 - t0)
            dec.append(t2 - t1)
        serial.copy_counter.reset()
        rows.append(CodecTiming(codec_id, size, int(statistics.median(enc)),
                                int(statistics.median(dec)), copies))
    return rows


def write_csv(rows: Iterable[CodecTiming], path) -> None:
    assert tuple(f.name for f in fields(CodecTiming)) == CSV_COLUMNS
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(astuple(row))
