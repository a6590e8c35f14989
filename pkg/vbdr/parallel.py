"""Data-parallel pool updates on worker threads.

Scans, boundaries and estimates run in phases: a parallel scan of one
slice, a barrier, an exclusive boundary split into independent register
blocks, then read-only estimates over host chunks. Scans are only allowed
for gfast and gsmall pools, whose record stores are idempotent and
commute, so any partition of a batch leaves the pool bit-identical to a
serial scan.
"""

from __future__ import annotations

import logging
import time

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from .engine import IpPairEvent, SliceClock
    from .pool import BdrPool

logger = logging.getLogger("vbdr.parallel")


class ParallelScanError(Exception):
    """Batch or pool not eligible for a parallel scan."""


def _check_workers(workers: int):
    if workers < 1:
        raise ParallelScanError(f"worker count must be positive, got {workers}")


@dataclass
class ScanBatch:
    """IP pairs of one slice and the number of workers to scan them."""

    aips: npt.NDArray[np.uint64]
    bips: npt.NDArray[np.uint64]
    workers: int = 1
    slice_index: Optional[int] = None

    def __post_init__(self):
        _check_workers(self.workers)
        if len(self.aips) != len(self.bips):
            raise ParallelScanError("aip and bip arrays differ in length")

    @classmethod
    def from_events(cls,
                    events: Sequence[IpPairEvent],
                    workers: int = 1,
                    clock: Optional[SliceClock] = None) -> ScanBatch:
        """Build a batch; with a clock, reject events of several slices."""
        slice_index = None
        if clock is not None and events:
            slices = {clock.slice_of(e.ts) for e in events}
            if len(slices) > 1:
                raise ParallelScanError(
                    f"batch spans slices {min(slices)}..{max(slices)}")
            slice_index = slices.pop()
        aips = np.fromiter((e.aip for e in events), dtype=np.uint64,
                           count=len(events))
        bips = np.fromiter((e.bip for e in events), dtype=np.uint64,
                           count=len(events))
        return cls(aips, bips, workers, slice_index)

    def __len__(self) -> int:
        return len(self.aips)

    def partitions(self) -> list[npt.NDArray[np.intp]]:
        """Round-robin event indices of every worker."""
        n = len(self)
        return [np.arange(w, n, self.workers, dtype=np.intp)
                for w in range(self.workers)]


@dataclass(frozen=True)
class ScanStats:
    events: int
    workers: int
    seconds: float

    @property
    def events_per_sec(self) -> float:
        if self.seconds <= 0:
            return float("inf")
        return self.events / self.seconds


def scan_batch(pool: BdrPool, batch: ScanBatch) -> ScanStats:
    """Scan a same-slice batch with `batch.workers` threads.

    Raises:
        ParallelScanError: for serial pools, whose read-modify-write
            maximum loses updates under concurrent writers.
    """
    if not pool.variant.concurrent:
        raise ParallelScanError(
            f"{pool.variant.value} pools accept a single writer only")

    # gsmall recorders must be aged before any record of the slice
    pool.open_slice()

    def work(part: npt.NDArray[np.intp]):
        rows, ranks = pool.scan_targets(batch.aips[part], batch.bips[part])
        pool.record_rows(rows, ranks)

    start = time.perf_counter()
    if batch.workers == 1:
        pool.record_rows(*pool.scan_targets(batch.aips, batch.bips))
    else:
        with ThreadPoolExecutor(max_workers=batch.workers) as executor:
            list(executor.map(work, batch.partitions()))
    stats = ScanStats(len(batch), batch.workers, time.perf_counter() - start)

    logger.info("scanned %d events with %d workers: %.0f events/s",
                stats.events, stats.workers, stats.events_per_sec)
    return stats


def row_blocks(m: int, workers: int) -> list[slice]:
    """Split [0, m) into at most `workers` contiguous blocks."""
    bounds = np.linspace(0, m, min(workers, m) + 1, dtype=np.int64)
    return [slice(int(a), int(b)) for a, b in zip(bounds, bounds[1:])]


def boundary_parallel(pool: BdrPool, workers: int) -> None:
    """Close the current slice with register blocks split across workers."""
    _check_workers(workers)
    blocks = row_blocks(pool.config.m, workers)
    if len(blocks) == 1:
        pool.boundary_rows(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as executor:
            list(executor.map(pool.boundary_rows, blocks))
    pool.commit_boundary()


def estimate_parallel(pool: BdrPool,
                      hosts: Iterable[int],
                      workers: int) -> npt.NDArray[np.float64]:
    """Estimate many hosts with host chunks split across workers."""
    _check_workers(workers)
    hosts = list(hosts)
    if not hosts:
        return np.zeros(0, dtype=np.float64)

    pool.register_values()
    chunks = np.array_split(np.asarray(hosts, dtype=np.uint64),
                            min(workers, len(hosts)))
    with ThreadPoolExecutor(max_workers=len(chunks)) as executor:
        parts = list(executor.map(pool.estimate_many, chunks))
    return np.concatenate(parts)
