"""Deterministic worker-pool helpers.

Results always come back in input order, so metric accumulation and file
output are byte-identical for any worker count. Sub-seeds for per-item
randomness are derived with splitmix64 so they do not depend on scheduling.
"""

from __future__ import annotations

import multiprocessing
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 step: advance by the 64-bit golden ratio and mix."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E9B5) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def subseed(seed: int, index: int) -> int:
    """Sub-seed for item ``index`` of a run seeded with ``seed``."""
    return splitmix64((seed & _MASK64) ^ splitmix64(index & _MASK64))


def _strided_worker(fn, items, start, step, queue):
    # Runs in a forked child: fn and items are inherited, never pickled,
    # so closures are fine. Only results cross the process boundary.
    try:
        out = [(i, fn(items[i])) for i in range(start, len(items), step)]
        queue.put(("ok", out))
    except BaseException as exc:  # noqa: BLE001 - forward to parent
        queue.put(("err", exc))


def parallel_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], jobs: int = 1) -> list[R]:
    """Map ``fn`` over ``items`` with ``jobs`` forked workers, preserving
    input order. ``jobs <= 1`` runs inline."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = multiprocessing.get_context("fork")
    workers = min(jobs, len(items))
    queue = ctx.SimpleQueue()
    procs = [
        ctx.Process(target=_strided_worker, args=(fn, items, w, workers, queue))
        for w in range(workers)
    ]
    for p in procs:
        p.start()
    results: list[R | None] = [None] * len(items)
    error: BaseException | None = None
    for _ in procs:
        status, payload = queue.get()
        if status == "err":
            error = error or payload
        else:
            for i, value in payload:
                results[i] = value
    for p in procs:
        p.join()
    if error is not None:
        raise error
    return results  # type: ignore[return-value]
