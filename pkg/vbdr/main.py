import csv
import contextlib
import dataclasses
import linecache
import logging
import sys
import time
import tracemalloc

from typing import IO, Iterable, Iterator, Optional

import click

from vbdr.baseline.lfpm import LfpmError
from vbdr.baseline.oracle import OracleError
from vbdr.baseline.traffic import (
    GenConfig,
    GeneratorError,
    generate,
    ground_truth,
    write_truth
)
from vbdr.bench import ESTIMATORS, BenchError, run_benchmark, write_report
from vbdr.config import Config, ConfigError, pool_config_from
from vbdr.engine import (
    CandidateRecorder,
    EngineError,
    SliceClock,
    WindowEngine,
    format_event,
    read_events
)
from vbdr.hashing import HashingError
from vbdr.parallel import ParallelScanError
from vbdr.pool import BdrPool, PoolError, check_estimator, memory_report
from vbdr.selftest import run_suite
from vbdr.sketch import BdrVariant, SketchError
from vbdr.utility import format_ip

logging.basicConfig(format="{name}: {message}", style="{")
logger = logging.getLogger("vbdr")

SCAN_HEADER = ("aip", "estimate", "window_start", "window_end")
MEMORY_HEADER = ("variant", "width", "zbits", "register_bits", "total_bits",
                 "configured_bits", "resident_bytes", "lfpm_bits")


class VbdrError(Exception):
    pass


# Errors reported to the user as a message and exit status 1.
USER_ERRORS = (
    VbdrError,
    ConfigError,
    HashingError,
    SketchError,
    PoolError,
    EngineError,
    ParallelScanError,
    GeneratorError,
    OracleError,
    LfpmError,
    BenchError,
    OSError
)


def set_verbose(verbose: bool):
    if verbose:
        logger.setLevel(logging.INFO)


@contextlib.contextmanager
def profiled(what: str) -> Iterator[None]:
    """Log wall time and allocated memory of the block in verbose mode."""
    enabled = logger.isEnabledFor(logging.INFO)
    if enabled:
        tracemalloc.start()
        t1 = time.perf_counter()
    try:
        yield
    finally:
        if enabled:
            dt = time.perf_counter() - t1
            logger.info(f"{what}: total time: {dt:.3f} sec")
            snapshot = tracemalloc.take_snapshot()
            tracemalloc.stop()
            display_memory_usage(snapshot)


def write_estimates(writer, engine: WindowEngine, threshold: float):
    window = engine.window()
    for aip, est in engine.query_top(threshold):
        writer.writerow((format_ip(aip), f"{est:.3f}",
                         window.start, window.end))


def run_scan(config: Config, fin: IO[str], fout: IO[str]) -> WindowEngine:
    """Scan an event stream, writing the candidates' estimates at every
    slice boundary."""
    pool_config = pool_config_from(config)
    # estimates are written at every boundary; fail before any output
    check_estimator(pool_config)
    logger.info("configuration:\n%s", config.describe())

    pool = BdrPool(pool_config)
    logger.info("pool: m=%d g=%d k=%d zbits=%d variant=%s",
                pool.config.m, pool.config.g, pool.config.k,
                pool.config.zbits, pool.variant.value)

    writer = csv.writer(fout, lineterminator='\n')
    writer.writerow(SCAN_HEADER)

    engine = WindowEngine(
        pool,
        SliceClock(config.slice_len, config.origin),
        CandidateRecorder(config.candidates),
        workers=config.workers,
        on_boundary=lambda e: write_estimates(writer, e, config.threshold)
    )
    reader = read_events(fin)

    with profiled("scan"):
        engine.ingest_many(reader)
        if engine.events:
            engine.flush()

    if reader.malformed or engine.out_of_order:
        logger.warning("skipped %d malformed line(s) and %d out-of-order "
                       "event(s)", reader.malformed, engine.out_of_order)
    logger.info("scanned %d events in %d slices", engine.events,
                engine.pool.slice_index)
    return engine


def run_bench(config: Config,
              gen: GenConfig,
              fout: IO[str],
              estimators: Iterable[str] = ESTIMATORS) -> None:
    # the benchmark window is the one the ground truth is computed for
    config.override({"k": gen.k})
    pool_config = pool_config_from(config)
    with profiled("bench"):
        rows = run_benchmark(pool_config, gen, estimators,
                             workers=config.workers,
                             timing=config.timing)
    write_report(rows, fout)


def run_generate(gen: GenConfig,
                 fout: IO[str],
                 truth_out: Optional[IO[str]] = None,
                 dotted: bool = True) -> int:
    count = 0
    for event in generate(gen):
        fout.write(format_event(event, dotted))
        fout.write('\n')
        count += 1
    if truth_out is not None:
        write_truth(ground_truth(gen), truth_out)
    logger.info("generated %d events", count)
    return count


def run_memory(config: Config,
               fout: IO[str],
               n_per_counter: Optional[float] = None) -> None:
    base = pool_config_from(config)
    writer = csv.writer(fout, lineterminator='\n')
    writer.writerow(MEMORY_HEADER)
    for variant in BdrVariant:
        report = memory_report(dataclasses.replace(base, variant=variant),
                               n_per_counter)
        row = report.as_row()
        if row["lfpm_bits"] is not None:
            row["lfpm_bits"] = f"{row['lfpm_bits']:.1f}"
        else:
            row["lfpm_bits"] = ""
        writer.writerow(row[name] for name in MEMORY_HEADER)


def run_selftest(workers: int,
                 seed: int = 0,
                 fault: Optional[str] = None) -> bool:
    with profiled("selftest"):
        ok = run_suite(workers=workers, seed=seed, fault=fault,
                       stream=sys.stderr)
    return ok


def display_memory_usage(snapshot: tracemalloc.Snapshot, lines_limit=10):
    snapshot = snapshot.filter_traces((
        tracemalloc.Filter(False, "<frozen importlib._bootstrap>"),
        tracemalloc.Filter(False, "<unknown>")
    ))

    if logger.isEnabledFor(logging.DEBUG):
        top_stats = snapshot.statistics("lineno")
        lines = [f"top {lines_limit} memory consumptive lines:"]
        for index, stat in enumerate(top_stats[:lines_limit], 1):
            frame, size = stat.traceback[0], stat.size / 1024
            s = f"# {index}: {frame}:{frame.lineno}: {size:.1f} KiB"
            lines.append(s)
            line = linecache.getline(frame.filename, frame.lineno).strip()
            if line:
                lines.append(f"  {line}")

        other = top_stats[lines_limit:]
        if other:
            size = sum(stat.size for stat in other) / 1024
            lines.append(f"{len(other)} other: {size:.1f} KiB")

        total = sum(stat.size for stat in top_stats) / 1024
        lines.append(f"total allocated size: {total:.1f} KiB")

        message = '\n'.join(lines)
        logger.debug(message)

    elif logger.isEnabledFor(logging.INFO):
        stats = snapshot.statistics("filename")
        size = sum(stat.size for stat in stats) / 1024
        logger.info(f"allocated memory: {size:.1f} KiB")


def open_stream(path: str, mode: str) -> IO[str]:
    """Open a file, `-` standing for stdin or stdout."""
    return click.open_file(path, mode, encoding="UTF-8")
