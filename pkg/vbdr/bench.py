"""Accuracy, memory and throughput of every estimator on one generated stream.

All estimators replay the same slice batches. After each slice closes,
every host with a non-zero true cardinality is estimated and its relative
error recorded; the report aggregates the errors over hosts and windows.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time

from dataclasses import dataclass
from typing import IO, Callable, Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .baseline.lfpm import LfpmPool
from .baseline.oracle import ExactOracle
from .baseline.traffic import (
    GenConfig,
    SliceBatch,
    TruthRow,
    all_hosts,
    generate_batches,
    ground_truth
)
from .engine import SliceClock, WindowEngine
from .parallel import estimate_parallel
from .pool import BdrPool, PoolConfig, memory_report
from .sketch import BdrVariant

logger = logging.getLogger("vbdr.bench")

LFPM = "lfpm-hll"
EXACT = "exact"
ESTIMATORS = tuple(v.value for v in BdrVariant) + (LFPM, EXACT)

REPORT_HEADER = (
    "estimator",
    "mean_rel_error",
    "p50_rel_error",
    "p95_rel_error",
    "bits_per_counter",
    "total_bits",
    "events_per_sec"
)

# bits of one stored (aip, bip) pair of the exact oracle
EXACT_PAIR_BITS = 64


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class BenchRow:
    estimator: str
    mean_rel_error: float
    p50_rel_error: float
    p95_rel_error: float
    bits_per_counter: Optional[float]
    total_bits: int
    events_per_sec: Optional[float]

    def as_csv(self) -> list[str]:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return f"{value:.6f}"
            return str(value)

        return [fmt(v) for v in dataclasses.astuple(self)]


@dataclass
class _Replay:
    """Result of replaying the stream through one estimator."""

    errors: list[float] = dataclasses.field(default_factory=list)
    events: int = 0
    seconds: float = 0.0

    def add(self, estimates: npt.ArrayLike, truth: npt.ArrayLike):
        estimates = np.asarray(estimates, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        mask = truth > 0
        errors = np.abs(estimates[mask] - truth[mask]) / truth[mask]
        self.errors.extend(errors.tolist())


def _truth_by_boundary(rows: Sequence[TruthRow],
                       hosts: int) -> list[npt.NDArray[np.int64]]:
    counts = np.array([r.true_cardinality for r in rows], dtype=np.int64)
    return [counts[i:i + hosts] for i in range(0, len(counts), hosts)]


def _replay(batches: Sequence[SliceBatch],
            truth: Sequence[npt.NDArray[np.int64]],
            scan: Callable[[SliceBatch], None],
            close: Callable[[int], None],
            estimate: Callable[[], npt.ArrayLike]) -> _Replay:
    result = _Replay()
    for batch, expected in zip(batches, truth):
        start = time.perf_counter()
        scan(batch)
        result.seconds += time.perf_counter() - start
        result.events += len(batch.aips)
        close(batch.slice_index)
        result.add(estimate(), expected)
    return result


def _row(name: str,
         replay: _Replay,
         bits_per_counter: Optional[float],
         total_bits: int,
         timing: bool) -> BenchRow:
    errors = np.asarray(replay.errors or [0.0])
    eps = None
    if timing:
        eps = replay.events / replay.seconds if replay.seconds > 0 else 0.0
    return BenchRow(estimator=name,
                    mean_rel_error=float(errors.mean()),
                    p50_rel_error=float(np.percentile(errors, 50)),
                    p95_rel_error=float(np.percentile(errors, 95)),
                    bits_per_counter=bits_per_counter,
                    total_bits=total_bits,
                    events_per_sec=eps)


def bench_vbdr(config: PoolConfig,
               batches: Sequence[SliceBatch],
               truth: Sequence[npt.NDArray[np.int64]],
               hosts: list[int],
               workers: int = 1,
               timing: bool = True) -> BenchRow:
    pool = BdrPool(config)
    engine = WindowEngine(pool, SliceClock(), workers=workers)

    def estimate():
        if workers > 1:
            return estimate_parallel(pool, hosts, workers)
        return pool.estimate_many(hosts)

    replay = _replay(
        batches, truth,
        lambda b: engine.ingest_arrays(b.slice_index, b.aips, b.bips),
        lambda s: engine.advance_to(s + 1),
        estimate)
    report = memory_report(config)
    return _row(config.variant.value, replay, report.register_bits,
                report.total_bits, timing)


def bench_lfpm(config: PoolConfig,
               batches: Sequence[SliceBatch],
               truth: Sequence[npt.NDArray[np.int64]],
               hosts: list[int],
               timing: bool = True) -> BenchRow:
    pool = LfpmPool(config)

    def close(slice_index: int):
        while pool.slice_index <= slice_index:
            pool.advance_slice()

    def scan(batch: SliceBatch):
        close(batch.slice_index - 1)
        pool.scan_pairs(batch.aips, batch.bips)

    replay = _replay(batches, truth, scan, close,
                     lambda: pool.estimate_many(hosts))
    # estimates prune expired cells, so the lists now hold the window only
    return _row(LFPM, replay, pool.mean_bits(), pool.memory_bits(), timing)


def bench_exact(k: int,
                batches: Sequence[SliceBatch],
                truth: Sequence[npt.NDArray[np.int64]],
                hosts: list[int],
                timing: bool = True) -> BenchRow:
    oracle = ExactOracle(k)
    replay = _replay(
        batches, truth,
        lambda b: oracle.ingest_many(b.slice_index, b.aips, b.bips),
        lambda s: None,
        lambda: oracle.cardinalities(hosts))
    pairs = sum(oracle.cardinalities(oracle.hosts()))
    return _row(EXACT, replay, None, EXACT_PAIR_BITS * pairs, timing)


def run_benchmark(config: PoolConfig,
                  gen: GenConfig,
                  estimators: Iterable[str] = ESTIMATORS,
                  workers: int = 1,
                  timing: bool = True) -> list[BenchRow]:
    """Replay the generated stream through every requested estimator.

    Raises:
        BenchError: if the pool window differs from the generator window,
            or an estimator name is unknown.
    """
    if config.k != gen.k:
        raise BenchError(f"pool window k={config.k} differs from the "
                         f"generator window k={gen.k}")
    estimators = list(estimators)
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise BenchError(f"unknown estimators: {', '.join(unknown)}")

    hosts = [spec.aip for spec in all_hosts(gen)]
    batches = list(generate_batches(gen))
    truth = _truth_by_boundary(ground_truth(gen), len(hosts))
    logger.info("benchmark: %d hosts, %d slices, %d events",
                len(hosts), len(batches), sum(len(b.aips) for b in batches))

    rows = []
    for name in estimators:
        if name == LFPM:
            row = bench_lfpm(config, batches, truth, hosts, timing)
        elif name == EXACT:
            row = bench_exact(gen.k, batches, truth, hosts, timing)
        else:
            variant_config = dataclasses.replace(config,
                                                 variant=BdrVariant(name))
            row = bench_vbdr(variant_config, batches, truth, hosts,
                             workers, timing)
        logger.info("%s: mean relative error %.4f", name, row.mean_rel_error)
        rows.append(row)
    return rows


def write_report(rows: Iterable[BenchRow], fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator='\n')
    writer.writerow(REPORT_HEADER)
    for row in rows:
        writer.writerow(row.as_csv())
