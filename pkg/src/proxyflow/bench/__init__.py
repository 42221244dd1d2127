"""Desk-scale benchmark harness: round-trip, throughput and tiled Cholesky."""

from .runner import (
    AGGREGATE, BenchConfig, BenchRecord, VerificationFailure, run, run_cholesky,
    run_roundtrip, run_throughput,
)
from .summary import relative_improvement, summarize

__all__ = [
    "AGGREGATE", "BenchConfig", "BenchRecord", "VerificationFailure", "relative_improvement",
    "run", "run_cholesky", "run_roundtrip", "run_throughput", "summarize",
]
