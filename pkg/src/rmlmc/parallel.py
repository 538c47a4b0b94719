"""Reproducible embarrassingly-parallel execution.

Every sample index gets its own counter-based Philox stream keyed by
``(root_seed, index)``, so a sample's randomness does not depend on which
worker runs it. Results are reduced in index order, which makes the reduced
value identical for any worker count.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

_MASK64 = (1 << 64) - 1


def derive_stream(root_seed: int, index: int) -> np.random.Generator:
    """Independent generator for ``(root_seed, index)``; O(1) to construct."""
    key = np.array([root_seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class TaskError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"task {index} failed: {cause!r}")
        self.index = index


def _run_block(task, indices):
    out = []
    for i in indices:
        try:
            out.append(task(i))
        except Exception as err:  # noqa: BLE001 - reported with the index
            raise TaskError(i, err) from err
    return out


def parallel_map(n: int, workers: int, task: Callable[[int], T], chunks_per_worker: int = 8) -> list[T]:
    """``[task(0), ..., task(n - 1)]`` evaluated on a thread pool.

    Indices are dealt out in contiguous chunks; the output order is always
    the index order.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1:
        return _run_block(task, range(n))
    n_chunks = min(n, workers * chunks_per_worker)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    blocks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_block, task, b) for b in blocks]
        results: list[T] = []
        for fut in futures:
            results.extend(fut.result())
    return results


def parallel_map_reduce(n: int, workers: int, task: Callable[[int], T],
                        reduce: Callable[[list[T]], R]) -> R:
    return reduce(parallel_map(n, workers, task))


@dataclass
class ScalingReport:
    worker_counts: list[int]
    n: list[int]
    wall_times: list[float]
    max_task_seconds: list[float]
    speedup: list[float] = field(init=False)
    efficiency: list[float] = field(init=False)

    def __post_init__(self):
        serial = self.wall_times[self.worker_counts.index(1)] if 1 in self.worker_counts else None
        if serial is None:
            raise ValueError("worker_counts must include 1 to define the serial baseline")
        self.speedup = [serial / t for t in self.wall_times]
        self.efficiency = [s / m for s, m in zip(self.speedup, self.worker_counts)]

    def rows(self):
        for row in zip(self.worker_counts, self.n, self.wall_times,
                       self.speedup, self.efficiency, self.max_task_seconds):
            yield row

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["workers", "n", "wall_seconds_median", "speedup",
                             "efficiency", "max_task_seconds"])
            for row in self.rows():
                writer.writerow(row)


def benchmark_scaling(worker_counts: Sequence[int], n: int, task: Callable[[int], object],
                      repeats: int = 3) -> ScalingReport:
    """Median wall time of ``parallel_map(n, M, task)`` for each ``M`` (fixed total work)."""
    worker_counts = [int(m) for m in worker_counts]
    if not worker_counts or any(m < 1 for m in worker_counts):
        raise ValueError("worker_counts must be non-empty and positive")
    if 1 not in worker_counts:
        worker_counts = [1] + worker_counts

    task_times = np.zeros(n)

    def timed(i):
        t0 = time.perf_counter()
        out = task(i)
        task_times[i] = time.perf_counter() - t0
        return out

    walls, maxes = [], []
    for m in worker_counts:
        runs = []
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            parallel_map(n, m, timed)
            runs.append(time.perf_counter() - t0)
        walls.append(statistics.median(runs))
        maxes.append(float(task_times.max()))
    return ScalingReport(worker_counts, [n] * len(worker_counts), walls, maxes)


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
