from __future__ import annotations

from typing import Any, Callable

import numpy as np

from ..engine.functions import gemm, potrf, syrk, trsm


def payload(seed: int, size: int, *index: int) -> bytes:
    """Deterministic random blob; identical for identical arguments."""
    return np.random.default_rng([seed, size, *index]).bytes(size)


def make_spd(n: int, seed: int) -> np.ndarray:
    """Symmetric positive-definite matrix ``M^T M + n I`` from seeded
    uniform ``M``."""
    m = np.random.default_rng(seed).uniform(size=(n, n))
    return m.T @ m + n * np.eye(n)


def split_tiles(a: np.ndarray, b: int) -> dict[tuple[int, int], np.ndarray]:
    n = a.shape[0]
    if a.shape != (n, n) or n % b:
        raise ValueError(f"tile size {b} must divide matrix order {n}")
    nt = n // b
    return {(i, j): np.ascontiguousarray(a[i * b:(i + 1) * b, j * b:(j + 1) * b])
            for i in range(nt) for j in range(i + 1)}


def assemble_lower(tiles: dict[tuple[int, int], np.ndarray], nt: int, b: int) -> np.ndarray:
    out = np.zeros((nt * b, nt * b))
    for (i, j), t in tiles.items():
        out[i * b:(i + 1) * b, j * b:(j + 1) * b] = t
    return np.tril(out)


def tiled_cholesky(tiles: dict, nt: int, run: Callable[[list], list],
                   dispose: Callable[[Any], None] = lambda v: None) -> dict:
    """Right-looking tiled Cholesky over the lower tiles.

    ``run(calls)`` executes a wave of independent ``(kernel, args)`` calls
    and returns their results in order. Results may be handles (proxies)
    as long as ``run`` accepts them back as arguments; ``dispose`` is
    called on every superseded handle.
    """
    t = dict(tiles)

    def wave(calls):
        targets = [ij for ij, _, _ in calls]
        results = run([(name, args) for _, name, args in calls])
        for ij, value in zip(targets, results):
            dispose(t[ij])
            t[ij] = value

    for k in range(nt):
        wave([((k, k), "potrf", (t[k, k],))])
        wave([((i, k), "trsm", (t[k, k], t[i, k])) for i in range(k + 1, nt)])
        updates = []
        for i in range(k + 1, nt):
            updates.append(((i, i), "syrk", (t[i, k], t[i, i])))
            for j in range(k + 1, i):
                updates.append(((i, j), "gemm", (t[i, k], t[j, k], t[i, j])))
        wave(updates)
    return t


KERNELS = {"potrf": potrf, "trsm": trsm, "syrk": syrk, "gemm": gemm}


def run_local(calls: list) -> list:
    return [KERNELS[name](*args) for name, args in calls]


def cholesky_local(a: np.ndarray, b: int) -> dict:
    """In-process tiled factorization with the same kernels the engine runs."""
    nt = a.shape[0] // b
    return tiled_cholesky(split_tiles(a, b), nt, run_local)


def residual(l: np.ndarray, a: np.ndarray) -> float:
    return float(np.max(np.abs(l @ l.T - a)) / np.max(np.abs(a)))
