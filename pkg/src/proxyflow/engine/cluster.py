from __future__ import annotations

import logging
import multiprocessing as mp
import time

from .scheduler import Scheduler, run_scheduler
from .worker import Worker, run_worker

log = logging.getLogger(__name__)


def _scheduler_main(host, conn):
    run_scheduler(host, 0, ready=lambda address: conn.send(address))


def _worker_main(address, slots, worker_id, imports):
    run_worker(address, slots, worker_id, tuple(imports))


class LocalCluster:
    """Scheduler plus ``n_workers`` workers on this machine.

    With ``processes=False`` everything runs on threads of the current
    process (handy for tests that register their own task functions). With
    ``processes=True`` the scheduler and each worker get their own process,
    so scheduler I/O competes with nothing but itself.
    """

    def __init__(self, n_workers: int = 1, slots: int = 1, processes: bool = False,
                 host: str = "127.0.0.1", imports: tuple[str, ...] = ()):
        self.n_workers = n_workers
        self.slots = slots
        self.processes = processes
        self.host = host
        self.imports = tuple(imports)
        self.scheduler: Scheduler | None = None
        self.workers: list = []
        self.address: tuple[str, int] | None = None
        self._scheduler_proc = None
        self._ctx = mp.get_context("spawn")

    def start(self) -> "LocalCluster":
        if self.processes:
            parent, child = self._ctx.Pipe()
            self._scheduler_proc = self._ctx.Process(
                target=_scheduler_main, args=(self.host, child), daemon=True)
            self._scheduler_proc.start()
            if not parent.poll(60):
                raise RuntimeError("scheduler process did not start")
            self.address = tuple(parent.recv())
            for i in range(self.n_workers):
                self.add_worker(f"worker-{i}")
        else:
            self.scheduler = Scheduler(self.host, 0).start()
            self.address = self.scheduler.address
            for i in range(self.n_workers):
                self.add_worker(f"worker-{i}")
        return self

    def add_worker(self, worker_id: str):
        if self.processes:
            proc = self._ctx.Process(
                target=_worker_main,
                args=(self.address, self.slots, worker_id, self.imports), daemon=True)
            proc.start()
            self.workers.append(proc)
            return proc
        worker = Worker(self.address, self.slots, worker_id, self.imports).start()
        self.workers.append(worker)
        return worker

    def wait_for_workers(self, client, n: int | None = None, timeout: float = 60.0) -> None:
        """Block until the scheduler has registered ``n`` workers."""
        n = self.n_workers if n is None else n
        deadline = time.monotonic() + timeout
        while client.stats().extra.get("workers", 0) < n:
            if time.monotonic() > deadline:
                raise TimeoutError(f"only some of {n} workers registered within {timeout}s")
            time.sleep(0.05)

    def close(self) -> None:
        if self.processes:
            for proc in self.workers:
                proc.terminate()
            for proc in self.workers:
                proc.join(10)
            if self._scheduler_proc is not None:
                self._scheduler_proc.terminate()
                self._scheduler_proc.join(10)
        else:
            for worker in self.workers:
                worker.stop()
            if self.scheduler is not None:
                self.scheduler.stop()
                self.scheduler.join(5)
        self.workers = []

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()
