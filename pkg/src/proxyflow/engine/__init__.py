"""Minimal centralized-scheduler task engine."""

from .client import Client, TaskFuture
from .cluster import LocalCluster
from .functions import WorkerExit, get_function, register
from .protocol import (
    ArgEnvelope, SchedulerStats, TaskKey, TaskResult, TaskSpec, Timings, task_key,
)
from .scheduler import Scheduler, run_scheduler
from .worker import Worker, run_worker


def pure_cache_lookup(scheduler: Scheduler, key: TaskKey):
    """Cached result body for ``key`` on an in-process scheduler, or None."""
    return scheduler._cache.get(key.digest)


def stats(client: Client) -> SchedulerStats:
    return client.stats()


__all__ = [
    "ArgEnvelope", "Client", "LocalCluster", "Scheduler", "SchedulerStats", "TaskFuture",
    "TaskKey", "TaskResult", "TaskSpec", "Timings", "Worker", "WorkerExit", "get_function",
    "pure_cache_lookup", "register", "run_scheduler", "run_worker", "stats", "task_key",
]
