"""Static registry of task functions available on every worker.

Workers never receive code; tasks name a function registered here (or in a
module the worker imports at start-up).
"""

from __future__ import annotations

import builtins
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import UnknownFunction

_registry: dict[str, Callable] = {}


def register(name: str, fn: Callable | None = None):
    """Register ``fn`` under ``name``; usable as a decorator."""

    def deco(f):
        existing = _registry.get(name)
        if existing is not None and existing is not f:
            raise ValueError(f"function {name!r} already registered")
        _registry[name] = f
        return f

    return deco(fn) if fn is not None else deco


def get_function(name: str) -> Callable:
    try:
        return _registry[name]
    except KeyError:
        raise UnknownFunction(f"no task function named {name!r}") from None


def name_of(fn: Callable | str) -> str:
    """Registered name for ``fn``; strings pass through unchanged."""
    if isinstance(fn, str):
        return fn
    for name, f in _registry.items():
        if f is fn:
            return name
    raise UnknownFunction(f"{fn!r} is not a registered task function")


def is_registered(name: str) -> bool:
    return name in _registry


def names() -> list[str]:
    return sorted(_registry)


class WorkerExit(BaseException):
    """Raised by a task to make its worker drop off the cluster without
    reporting a result. Used for fault-injection."""


register("sum", builtins.sum)
register("len", builtins.len)
register("identity", lambda x: x)


@register("noop")
def noop(payload, result_size: int = 0, seed: int = 0) -> bytes:
    """Consume ``payload`` and produce ``result_size`` seeded random bytes."""
    return np.random.default_rng(seed).bytes(result_size)


# Tiled Cholesky kernels. Inputs may be read-only views; outputs are fresh.

@register("potrf")
def potrf(a: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(a)


@register("trsm")
def trsm(l_kk: np.ndarray, a_ik: np.ndarray) -> np.ndarray:
    # L_ik = A_ik L_kk^-T
    return np.ascontiguousarray(solve_triangular(l_kk, a_ik.T, lower=True).T)


@register("syrk")
def syrk(l_ik: np.ndarray, a_ii: np.ndarray) -> np.ndarray:
    return a_ii - l_ik @ l_ik.T


@register("gemm")
def gemm(l_ik: np.ndarray, l_jk: np.ndarray, a_ij: np.ndarray) -> np.ndarray:
    return a_ij - l_ik @ l_jk.T
