import unittest

import numpy as np

from vbdr.engine import IpPairEvent, SliceClock
from vbdr.parallel import (
    ParallelScanError,
    ScanBatch,
    ScanStats,
    boundary_parallel,
    estimate_parallel,
    row_blocks,
    scan_batch
)
from vbdr.pool import BdrPool, PoolConfig
from vbdr.sketch import BdrVariant

CONCURRENT = (BdrVariant.BITSET, BdrVariant.DRV_DIRECT)


def random_batch(rng, events, hosts, workers):
    aips = rng.integers(0, hosts, size=events, dtype=np.uint64)
    bips = rng.integers(0, 1 << 32, size=events, dtype=np.uint64)
    return ScanBatch(aips, bips, workers)


class TestScanBatch(unittest.TestCase):

    def test_partitions(self):
        batch = ScanBatch(np.arange(7, dtype=np.uint64),
                          np.arange(7, dtype=np.uint64), workers=3)
        parts = batch.partitions()
        self.assertEqual([p.tolist() for p in parts],
                         [[0, 3, 6], [1, 4], [2, 5]])
        self.assertEqual(len(batch), 7)

    def test_from_events(self):
        events = [IpPairEvent(0.1, 1, 2), IpPairEvent(0.9, 3, 4)]
        batch = ScanBatch.from_events(events, 2, SliceClock())
        self.assertEqual(batch.aips.tolist(), [1, 3])
        self.assertEqual(batch.bips.tolist(), [2, 4])
        self.assertEqual(batch.slice_index, 0)

    def test_events_of_several_slices(self):
        events = [IpPairEvent(0.5, 1, 2), IpPairEvent(1.5, 1, 3)]
        with self.assertRaises(ParallelScanError):
            ScanBatch.from_events(events, 2, SliceClock())

    def test_invalid(self):
        with self.assertRaises(ParallelScanError):
            ScanBatch(np.zeros(1), np.zeros(1), workers=0)
        with self.assertRaises(ParallelScanError):
            ScanBatch(np.zeros(1), np.zeros(2))


class TestScanParallel(unittest.TestCase):

    def test_serial_pool_rejected(self):
        pool = BdrPool(PoolConfig(m=256, b=4, k=4,
                                  variant=BdrVariant.SERIAL))
        with self.assertRaises(ParallelScanError):
            scan_batch(pool, random_batch(np.random.default_rng(0), 10, 2, 2))

    def test_matches_serial_scan(self):
        rng = np.random.default_rng(1)
        for variant in CONCURRENT:
            config = PoolConfig(m=1 << 12, b=6, k=4, variant=variant)
            for workers in (1, 2, 8):
                reference, pool = BdrPool(config), BdrPool(config)
                for _ in range(3):
                    batch = random_batch(rng, 20000, 50, workers)
                    reference.scan_pairs(batch.aips, batch.bips)
                    stats = scan_batch(pool, batch)
                    self.assertIsInstance(stats, ScanStats)
                    self.assertEqual(stats.events, 20000)
                    self.assertEqual(pool.state(), reference.state())
                    reference.advance_slice()
                    pool.advance_slice()

    def test_duplicates(self):
        rng = np.random.default_rng(2)
        batch = random_batch(rng, 500, 5, 4)
        doubled = ScanBatch(np.concatenate([batch.aips] * 3),
                            np.concatenate([batch.bips] * 3), 4)
        for variant in CONCURRENT:
            config = PoolConfig(m=512, b=4, k=4, variant=variant)
            once, thrice = BdrPool(config), BdrPool(config)
            scan_batch(once, batch)
            scan_batch(thrice, doubled)
            self.assertEqual(once.state(), thrice.state())

    def test_stats(self):
        self.assertEqual(ScanStats(10, 2, 0.5).events_per_sec, 20.0)
        self.assertEqual(ScanStats(10, 2, 0.0).events_per_sec, float("inf"))


class TestBoundaryParallel(unittest.TestCase):

    def test_row_blocks(self):
        blocks = row_blocks(10, 3)
        self.assertEqual(len(blocks), 3)
        covered = [i for block in blocks for i in range(10)[block]]
        self.assertEqual(covered, list(range(10)))
        self.assertEqual(len(row_blocks(2, 8)), 2)

    def test_matches_advance_slice(self):
        rng = np.random.default_rng(3)
        for variant in BdrVariant:
            config = PoolConfig(m=1 << 10, b=5, k=3, variant=variant)
            reference, pool = BdrPool(config), BdrPool(config)
            for step in range(6):
                if step != 3:
                    batch = random_batch(rng, 3000, 20, 1)
                    reference.scan_pairs(batch.aips, batch.bips)
                    pool.scan_pairs(batch.aips, batch.bips)
                reference.advance_slice()
                boundary_parallel(pool, 8)
                self.assertEqual(pool.state(), reference.state())
                self.assertEqual(pool.slice_index, reference.slice_index)

    def test_fresh_pool(self):
        config = PoolConfig(m=256, b=4, k=3)
        pool = BdrPool(config)
        boundary_parallel(pool, 4)
        self.assertEqual(pool.state(), BdrPool(config).state())

    def test_invalid_workers(self):
        with self.assertRaises(ParallelScanError):
            boundary_parallel(BdrPool(PoolConfig(m=256, b=4)), 0)


class TestEstimateParallel(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(4)
        self.pool = BdrPool(PoolConfig(m=1 << 12, b=6, k=4))
        batch = random_batch(rng, 20000, 30, 1)
        self.pool.scan_pairs(batch.aips, batch.bips)
        self.pool.advance_slice()

    def test_matches_estimate_many(self):
        hosts = list(range(30))
        expected = self.pool.estimate_many(hosts)
        for workers in (1, 3, 8, 64):
            np.testing.assert_array_equal(
                estimate_parallel(self.pool, hosts, workers), expected)

    def test_empty(self):
        self.assertEqual(len(estimate_parallel(self.pool, [], 4)), 0)

    def test_single_host(self):
        self.assertEqual(estimate_parallel(self.pool, [7], 4).tolist(),
                         [self.pool.estimate(7)])
