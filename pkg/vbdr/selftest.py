"""Property suite run by `vbdr selftest`.

The suite is assembled at runtime: one TestCase class per variant and
property, every class replaying seeded random streams against a brute
force reference. A fault can be injected around the run to check that
the suite notices broken window sliding.
"""

from __future__ import annotations

import contextlib
import logging
import unittest

from unittest import mock
from typing import Callable, ContextManager, Iterator, Optional, Sequence

import numpy as np

from . import sketch
from .baseline.lfpm import LfpmList
from .baseline.oracle import ExactOracle
from .baseline.traffic import GenConfig, HostSpec, generate_batches, ground_truth
from .engine import Window
from .parallel import ScanBatch, scan_batch
from .pool import BdrPool, PoolConfig
from .sketch import BdrBase, BdrVariant, make_bdr

logger = logging.getLogger("vbdr.selftest")

STREAMS = 20
SLICES = 40
WINDOWS = (1, 4, 8)
WIDTHS = (30, 23)

TEST_PREFIX = "test_"


def _no_slide(drv, top):
    pass


FAULTS: dict[str, Callable[[], ContextManager]] = {
    "skip-slide": lambda: mock.patch.object(
        sketch, "slide_recorders", _no_slide),
}


def random_slices(rng: np.random.Generator,
                  slices: int,
                  width: int,
                  max_ranks: int = 6) -> list[list[int]]:
    """Per-slice rank lists; small ranks dominate like LBP1 values do."""
    out = []
    for _ in range(slices):
        count = int(rng.integers(0, max_ranks + 1))
        ranks = np.minimum(rng.geometric(0.5, size=count), width)
        out.append(ranks.tolist())
    return out


def windowed_max(slices: Sequence[Sequence[int]], k: int) -> list[int]:
    """Largest rank of the last k slices, after every slice."""
    out = []
    for t in range(len(slices)):
        window = slices[max(0, t - k + 1):t + 1]
        out.append(max((r for ranks in window for r in ranks), default=0))
    return out


def replay_ranks(bdr: BdrBase,
                 slices: Sequence[Sequence[int]],
                 k: int) -> list[int]:
    """Feed slices to a standalone register; readouts after every slice."""
    out = []
    direct = bdr.VARIANT is BdrVariant.DRV_DIRECT
    for ranks in slices:
        if direct:
            bdr.begin_slice_update()
        for r in ranks:
            bdr.record(r)
        if not direct:
            bdr.end_slice_update()
        out.append(bdr.get_lbp1(k))
    return out


def replay_lfpm(slices: Sequence[Sequence[int]], k: int) -> list[int]:
    lst = LfpmList()
    out = []
    for t, ranks in enumerate(slices):
        for r in ranks:
            lst.insert(t, r)
        out.append(lst.query(t, k))
    return out


def random_stream(rng: np.random.Generator,
                  events: int,
                  hosts: int) -> tuple[np.ndarray, np.ndarray]:
    aips = rng.integers(0, hosts, size=events, dtype=np.uint64)
    bips = rng.integers(0, 1 << 32, size=events, dtype=np.uint64)
    return aips, bips


def setUpSelftestSuite(workers: int = 4, seed: int = 0) -> unittest.TestSuite:
    suite = unittest.TestSuite()
    loader = unittest.defaultTestLoader

    for _variant in BdrVariant:
        class SlidingCase(unittest.TestCase):
            variant = _variant

        for k in WINDOWS:
            for width in WIDTHS:
                addSlidingCase(SlidingCase, k, width, seed)
        SlidingCase.__name__ = f"Sliding_{_variant.value}"
        suite.addTest(loader.loadTestsFromTestCase(SlidingCase))

    class EquivalenceCase(unittest.TestCase):
        pass

    for k in WINDOWS:
        addLfpmCase(EquivalenceCase, k, seed)
        addVariantCase(EquivalenceCase, k, seed)
    addOracleCase(EquivalenceCase, seed)
    suite.addTest(loader.loadTestsFromTestCase(EquivalenceCase))

    class ParallelCase(unittest.TestCase):
        pass

    for _variant in (BdrVariant.BITSET, BdrVariant.DRV_DIRECT):
        addParallelCase(ParallelCase, _variant, workers, seed)
    suite.addTest(loader.loadTestsFromTestCase(ParallelCase))

    return suite


def addSlidingCase(case_cls, k, width, seed):
    name = f"{TEST_PREFIX}sliding__k{k}__w{width}"

    def wrapper(self: unittest.TestCase):
        logger.info("testing %s: %s", self.variant.value, name)
        rng = np.random.default_rng([seed, k, width])
        zbits = sketch.default_zbits(k)
        for _ in range(STREAMS):
            slices = random_slices(rng, SLICES, width)
            bdr = make_bdr(self.variant, width, zbits)
            self.assertEqual(replay_ranks(bdr, slices, k),
                             windowed_max(slices, k))

    wrapper.__name__ = name
    setattr(case_cls, name, wrapper)


def addLfpmCase(case_cls, k, seed):
    name = f"{TEST_PREFIX}lfpm_matches_bdr__k{k}"

    def wrapper(self: unittest.TestCase):
        logger.info("testing %s", name)
        rng = np.random.default_rng([seed, k, 1])
        zbits = sketch.default_zbits(k)
        for _ in range(STREAMS):
            slices = random_slices(rng, SLICES, 23)
            bdr = make_bdr(BdrVariant.DRV_DIRECT, 23, zbits)
            self.assertEqual(replay_lfpm(slices, k),
                             replay_ranks(bdr, slices, k))

    wrapper.__name__ = name
    setattr(case_cls, name, wrapper)


def addVariantCase(case_cls, k, seed):
    name = f"{TEST_PREFIX}variants_agree__k{k}"

    def wrapper(self: unittest.TestCase):
        logger.info("testing %s", name)
        rng = np.random.default_rng([seed, k, 2])
        pools = [BdrPool(PoolConfig(m=256, b=4, k=k, variant=v))
                 for v in BdrVariant]
        hosts = list(range(16))
        for _ in range(SLICES):
            aips, bips = random_stream(rng, 200, len(hosts))
            for pool in pools:
                pool.scan_pairs(aips, bips)
                pool.advance_slice()
            first = pools[0].gather_many(hosts)
            for pool in pools[1:]:
                np.testing.assert_array_equal(pool.gather_many(hosts), first)

    wrapper.__name__ = name
    setattr(case_cls, name, wrapper)


def addOracleCase(case_cls, seed):
    name = f"{TEST_PREFIX}oracle_reproduces_ground_truth"

    def wrapper(self: unittest.TestCase):
        logger.info("testing %s", name)
        hosts = [HostSpec(1, 300), HostSpec(2, 50, frozenset({1, 2}))]
        config = GenConfig(hosts=hosts,
                           slices=10, k=4, background_hosts=5,
                           background_n=20, seed=seed)
        oracle = ExactOracle(config.k)
        truth = iter(ground_truth(config))
        for batch in generate_batches(config):
            oracle.ingest_many(batch.slice_index, batch.aips, batch.bips)
            for _ in range(len(hosts) + config.background_hosts):
                row = next(truth)
                window = Window(row.window_start, row.window_end)
                self.assertEqual(oracle.cardinality(row.aip, window),
                                 row.true_cardinality)

    wrapper.__name__ = name
    setattr(case_cls, name, wrapper)


def addParallelCase(case_cls, variant, workers, seed):
    name = f"{TEST_PREFIX}parallel_equals_serial__{variant.value}"

    def wrapper(self: unittest.TestCase):
        logger.info("testing %s with %d workers", name, workers)
        rng = np.random.default_rng([seed, workers, 3])
        config = PoolConfig(m=1 << 10, b=5, k=4, variant=variant)
        serial, parallel = BdrPool(config), BdrPool(config)
        for _ in range(6):
            aips, bips = random_stream(rng, 5000, 64)
            serial.scan_pairs(aips, bips)
            scan_batch(parallel, ScanBatch(aips, bips, workers))
            self.assertEqual(parallel.state(), serial.state())
            serial.advance_slice()
            parallel.advance_slice()

    wrapper.__name__ = name
    setattr(case_cls, name, wrapper)


@contextlib.contextmanager
def injected(fault: Optional[str]) -> Iterator[None]:
    if fault is None:
        yield
        return
    if fault not in FAULTS:
        raise KeyError(f"unknown fault {fault!r}, expected one of "
                       f"{', '.join(FAULTS)}")
    logger.info("injecting fault: %s", fault)
    with FAULTS[fault]():
        yield


def run_suite(workers: int = 4,
              seed: int = 0,
              fault: Optional[str] = None,
              stream=None,
              verbosity: int = 1) -> bool:
    """Run the property suite; return True if every case passed."""
    runner = unittest.TextTestRunner(stream=stream, verbosity=verbosity)
    with injected(fault):
        result = runner.run(setUpSelftestSuite(workers, seed))
    return result.wasSuccessful()
