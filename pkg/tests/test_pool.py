import io
import json
import math
import unittest

import numpy as np

from vbdr.hashing import HASH_SPACE, HashSeed, h_array
from vbdr.pool import (
    LOGLOG_ALPHA,
    BdrPool,
    EstimatorError,
    PoolConfig,
    PoolConfigError,
    SnapshotError,
    check_estimator,
    hll_alpha,
    loglog_estimate,
    memory_report,
    raw_hll_estimate,
    shared_estimate
)
from vbdr.sketch import BdrVariant, lbp1_array


def plain_hll(values: np.ndarray, s: int, seed: int) -> float:
    """Estimate with a single plain HyperLogLog of s registers."""
    b = s.bit_length() - 1
    hashed = h_array(values, HASH_SPACE, seed)
    index = (hashed >> np.uint64(32 - b)).astype(np.intp)
    ranks = lbp1_array((hashed << np.uint64(b)) & np.uint64(0xFFFFFFFF),
                       32 - b)
    registers = np.zeros(s, dtype=np.int64)
    np.maximum.at(registers, index, ranks)
    return raw_hll_estimate(registers)


def random_pairs(rng, events, hosts):
    aips = rng.integers(0, hosts, size=events, dtype=np.uint64)
    bips = rng.integers(0, HASH_SPACE, size=events, dtype=np.uint64)
    return aips, bips


def changed_rows(pool: BdrPool, drv: np.ndarray, acc) -> set[int]:
    rows = set(np.flatnonzero((pool.drv != drv).any(axis=1)).tolist())
    if acc is not None:
        diff = pool.acc != acc
        if diff.ndim > 1:
            diff = diff.any(axis=1)
        rows |= set(np.flatnonzero(diff).tolist())
    return rows


class TestPoolConfig(unittest.TestCase):

    def test_derived(self):
        config = PoolConfig(m=1 << 12, b=8, k=15)
        self.assertEqual(config.g, 256)
        self.assertEqual(config.width, 24)
        self.assertEqual(config.zbits, 4)

    def test_variant_from_string(self):
        config = PoolConfig(m=256, b=4, variant="gfast")
        self.assertIs(config.variant, BdrVariant.BITSET)

    def test_invalid(self):
        invalid = [
            dict(b=0),
            dict(b=32),
            dict(m=31, b=4),
            dict(k=0),
            dict(k=15, zbits=3),
            dict(zbits=17),
            dict(variant="turbo"),
        ]
        for kwargs in invalid:
            with self.subTest(**kwargs):
                with self.assertRaises(PoolConfigError):
                    PoolConfig(**kwargs)

    def test_dict(self):
        config = PoolConfig(m=512, b=5, k=7, variant=BdrVariant.SERIAL,
                            seeds=HashSeed(1, 2))
        self.assertEqual(PoolConfig.from_dict(config.as_dict()), config)


class TestEstimators(unittest.TestCase):

    def test_alpha(self):
        self.assertEqual(hll_alpha(16), 0.673)
        self.assertEqual(hll_alpha(64), 0.709)
        self.assertAlmostEqual(hll_alpha(512), 0.7213 / (1 + 1.079 / 512))

    def test_empty_registers(self):
        self.assertEqual(raw_hll_estimate(np.zeros(64, dtype=np.int64)), 0.0)

    def test_linear_counting(self):
        ranks = [1] + [0] * 15
        self.assertAlmostEqual(raw_hll_estimate(ranks),
                               16 * math.log(16 / 15))

    def test_raw_estimate(self):
        self.assertAlmostEqual(raw_hll_estimate([1] * 64), 0.709 * 128)

    def test_monotonic_in_ranks(self):
        estimates = [raw_hll_estimate([r] * 64) for r in range(12)]
        self.assertEqual(estimates, sorted(estimates))
        self.assertEqual(len(set(estimates)), len(estimates))

    def test_unsupported_register_count(self):
        for s in (0, 8, 100):
            with self.assertRaises(EstimatorError):
                raw_hll_estimate([0] * s)

    def test_check_estimator(self):
        small = PoolConfig(m=64, b=2, k=4)
        with self.assertRaises(EstimatorError):
            check_estimator(small)
        with self.assertRaises(EstimatorError):
            check_estimator(PoolConfig(), "minhash")
        check_estimator(small, "loglog")
        check_estimator(PoolConfig(m=1 << 12, b=4, k=4))

    def test_accuracy(self):
        n, trials = 10000, 100
        estimates = [plain_hll(np.arange(n, dtype=np.uint64)
                               + np.uint64(t * n), 64, seed=t)
                     for t in range(trials)]
        self.assertLess(abs(np.mean(estimates) / n - 1), 0.13)

    def test_doubling(self):
        trials = 50
        means = []
        for n in (5000, 10000):
            means.append(np.mean([
                plain_hll(np.arange(n, dtype=np.uint64)
                          + np.uint64(t * 20000), 64, seed=1000 + t)
                for t in range(trials)]))
        self.assertAlmostEqual(means[1] / means[0], 2.0, delta=0.2)

    def test_loglog(self):
        self.assertAlmostEqual(loglog_estimate([0] * 4), LOGLOG_ALPHA * 4)
        self.assertAlmostEqual(loglog_estimate([2] * 4), LOGLOG_ALPHA * 16)
        # only the sum matters
        self.assertAlmostEqual(loglog_estimate([1, 3, 2, 2]),
                               loglog_estimate([2, 2, 2, 2]))
        with self.assertRaises(EstimatorError):
            loglog_estimate([])

    def test_shared_estimate(self):
        est = shared_estimate([100.0], 1000.0, 1024, 16)
        expected = 1024 * 16 / (1024 - 16) * (100 / 16 - 1000 / 1024)
        self.assertAlmostEqual(float(est[0]), expected)

    def test_shared_estimate_clamped(self):
        self.assertEqual(shared_estimate([0.0], 100.0, 1024, 16).tolist(),
                         [0.0])

    def test_shared_estimate_degenerate(self):
        with self.assertRaises(PoolConfigError):
            shared_estimate([1.0], 1.0, 16, 16)


class TestMemoryReport(unittest.TestCase):

    def test_example(self):
        bits = {}
        for variant in BdrVariant:
            config = PoolConfig(m=1 << 12, b=8, k=15, variant=variant)
            report = memory_report(config)
            bits[variant] = report.register_bits
            self.assertEqual(report.total_bits, (1 << 12) * bits[variant])
            self.assertEqual(report.configured_bits, bits[variant])
        self.assertEqual(bits[BdrVariant.DRV_DIRECT], 96)
        self.assertEqual(bits[BdrVariant.BITSET], 120)
        self.assertEqual(bits[BdrVariant.SERIAL], 101)

    def test_configured_width(self):
        config = PoolConfig(m=1 << 12, b=8, k=15, zbits=8,
                            variant=BdrVariant.DRV_DIRECT)
        report = memory_report(config)
        self.assertEqual(report.register_bits, 96)
        self.assertEqual(report.configured_bits, 192)
        self.assertEqual(report.resident_bytes, 24)

    def test_resident_bytes(self):
        resident = {
            variant: memory_report(PoolConfig(m=1 << 12, b=8, k=15,
                                              variant=variant)).resident_bytes
            for variant in BdrVariant
        }
        self.assertEqual(resident[BdrVariant.SERIAL], 25)
        self.assertEqual(resident[BdrVariant.BITSET], 48)
        self.assertEqual(resident[BdrVariant.DRV_DIRECT], 24)

    def test_lfpm_figure(self):
        config = PoolConfig(m=1 << 12, b=8, k=15)
        self.assertIsNone(memory_report(config).lfpm_bits)
        self.assertAlmostEqual(memory_report(config, 100).lfpm_bits,
                               40 * math.log(100))


class TestBdrPool(unittest.TestCase):

    def test_fresh_pool(self):
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=1 << 12, b=6, k=4, variant=variant))
            self.assertEqual(pool.register_values().sum(), 0)
            self.assertEqual(pool.estimate(42), 0.0)
            self.assertEqual(pool.estimate(42, "loglog"), 0.0)

    def test_scan_is_idempotent(self):
        for variant in BdrVariant:
            config = PoolConfig(m=256, b=4, k=4, variant=variant)
            once, twice = BdrPool(config), BdrPool(config)
            once.scan_pair(7, 12345)
            twice.scan_pair(7, 12345)
            twice.scan_pair(7, 12345)
            self.assertEqual(once.state(), twice.state())

    def test_scan_touches_one_register(self):
        rng = np.random.default_rng(3)
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=256, b=4, k=4, variant=variant))
            pool.open_slice()
            for aip, bip in zip(*random_pairs(rng, 20, 5)):
                drv = pool.drv.copy()
                acc = None if pool.acc is None else pool.acc.copy()
                pool.scan_pair(int(aip), int(bip))
                row, _ = pool.scan_target(int(aip), int(bip))
                self.assertTrue(changed_rows(pool, drv, acc) <= {row})

    def test_scan_pairs_matches_scan_pair(self):
        rng = np.random.default_rng(4)
        aips, bips = random_pairs(rng, 300, 10)
        for variant in BdrVariant:
            config = PoolConfig(m=512, b=5, k=4, variant=variant)
            single, batch = BdrPool(config), BdrPool(config)
            for aip, bip in zip(aips.tolist(), bips.tolist()):
                single.scan_pair(aip, bip)
            batch.scan_pairs(aips, bips)
            self.assertEqual(single.state(), batch.state())
            rows, ranks = batch.scan_targets(aips[:5], bips[:5])
            self.assertEqual(list(zip(rows.tolist(), ranks.tolist())),
                             [batch.scan_target(a, b) for a, b in
                              zip(aips[:5].tolist(), bips[:5].tolist())])

    def test_every_virtual_register_filled(self):
        pool = BdrPool(PoolConfig(m=1 << 12, b=6, k=4))
        bips = np.arange(10000, dtype=np.uint64)
        pool.scan_pairs(np.full(len(bips), 9, dtype=np.uint64), bips)
        pool.advance_slice()
        self.assertTrue((pool.gather_registers(9) > 0).all())

    def test_expiry(self):
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=256, b=4, k=3, variant=variant))
            row, rank = pool.scan_target(1, 99)
            pool.scan_pair(1, 99)
            readouts = []
            for _ in range(4):
                pool.advance_slice()
                readouts.append(int(pool.register_values()[row]))
            self.assertEqual(readouts, [rank, rank, rank, 0], variant)
            self.assertEqual(pool.slice_index, 4)

    def test_silent_window_clears_pool(self):
        rng = np.random.default_rng(8)
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=1 << 10, b=5, k=4, variant=variant))
            for _ in range(3):
                pool.scan_pairs(*random_pairs(rng, 1000, 20))
                pool.advance_slice()
            for _ in range(4):
                pool.advance_slice()
            self.assertEqual(pool.register_values().sum(), 0)
            self.assertTrue((pool.estimate_many(range(20)) == 0).all())

    def test_slice_order_insensitive(self):
        rng = np.random.default_rng(15)
        aips, bips = random_pairs(rng, 3000, 20)
        perm = rng.permutation(len(aips))
        for variant in BdrVariant:
            config = PoolConfig(m=1 << 10, b=5, k=4, variant=variant)
            forward, shuffled = BdrPool(config), BdrPool(config)
            forward.scan_pairs(aips, bips)
            for i in perm.tolist():
                shuffled.scan_pair(int(aips[i]), int(bips[i]))
            self.assertEqual(forward.state(), shuffled.state(), variant)
            forward.advance_slice()
            shuffled.advance_slice()
            self.assertEqual(forward.state(), shuffled.state(), variant)

    def test_window_locality(self):
        rng = np.random.default_rng(9)
        k = 4
        slices = [random_pairs(rng, 500, 8) for _ in range(12)]
        for variant in BdrVariant:
            config = PoolConfig(m=1 << 10, b=5, k=k, variant=variant)
            full, recent = BdrPool(config), BdrPool(config)
            for aips, bips in slices:
                full.scan_pairs(aips, bips)
                full.advance_slice()
            for aips, bips in slices[-k:]:
                recent.scan_pairs(aips, bips)
                recent.advance_slice()
            np.testing.assert_array_equal(full.register_values(),
                                          recent.register_values())
            np.testing.assert_array_equal(full.estimate_many(range(8)),
                                          recent.estimate_many(range(8)))

    def test_sum_lbp1(self):
        rng = np.random.default_rng(10)
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=512, b=4, k=4, variant=variant))
            pool.scan_pairs(*random_pairs(rng, 2000, 6))
            pool.advance_slice()
            for aip in range(6):
                self.assertEqual(pool.sum_lbp1(aip),
                                 int(pool.gather_registers(aip).sum()))

    def test_gather_many(self):
        rng = np.random.default_rng(12)
        pool = BdrPool(PoolConfig(m=512, b=4, k=4))
        pool.scan_pairs(*random_pairs(rng, 2000, 6))
        pool.advance_slice()
        matrix = pool.gather_many([3, 5])
        self.assertEqual(matrix.shape, (2, 16))
        np.testing.assert_array_equal(matrix[1], pool.gather_registers(5))
        self.assertEqual(pool.gather_many([]).shape[0], 0)
        self.assertEqual(len(pool.estimate_many([])), 0)

    def test_estimate(self):
        pool = BdrPool(PoolConfig(m=1 << 16, b=9, k=4))
        n = 20000
        bips = np.arange(n, dtype=np.uint64) * np.uint64(7919)
        pool.scan_pairs(np.full(n, 5, dtype=np.uint64), bips)
        pool.advance_slice()
        self.assertLess(abs(pool.estimate(5) / n - 1), 0.2)
        self.assertLess(pool.estimate(6), 0.05 * n)

    def test_estimate_methods(self):
        pool = BdrPool(PoolConfig(m=64, b=3, k=4))
        with self.assertRaises(EstimatorError):
            pool.estimate(1)
        self.assertEqual(pool.estimate(1, "loglog"), 0.0)
        with self.assertRaises(EstimatorError):
            pool.estimate(1, "median")

    def test_copy(self):
        rng = np.random.default_rng(13)
        pool = BdrPool(PoolConfig(m=256, b=4, k=4,
                                  variant=BdrVariant.SERIAL))
        pool.scan_pairs(*random_pairs(rng, 100, 4))
        other = pool.copy()
        self.assertEqual(other.state(), pool.state())
        other.advance_slice()
        self.assertNotEqual(other.state(), pool.state())


class TestSnapshot(unittest.TestCase):

    def test_dump_and_load(self):
        rng = np.random.default_rng(14)
        for variant in BdrVariant:
            pool = BdrPool(PoolConfig(m=512, b=4, k=5, variant=variant))
            for _ in range(3):
                pool.scan_pairs(*random_pairs(rng, 300, 5))
                pool.advance_slice()
            pool.scan_pairs(*random_pairs(rng, 300, 5))

            fp = io.StringIO()
            pool.dump(fp)
            fp.seek(0)
            loaded = BdrPool.load(fp)

            self.assertEqual(loaded.config, pool.config)
            self.assertEqual(loaded.state(), pool.state())
            self.assertEqual(loaded.slice_index, 3)
            self.assertEqual(loaded.slice_open, pool.slice_open)
            loaded.advance_slice()
            pool.advance_slice()
            np.testing.assert_array_equal(loaded.estimate_many(range(5)),
                                          pool.estimate_many(range(5)))

    def test_not_json(self):
        with self.assertRaises(SnapshotError):
            BdrPool.load(io.StringIO("pool"))

    def test_wrong_format(self):
        with self.assertRaises(SnapshotError):
            BdrPool.load(io.StringIO(json.dumps({"format": "other"})))

    def test_wrong_version(self):
        data = {"format": "vbdr-pool", "version": 99}
        with self.assertRaises(SnapshotError):
            BdrPool.load(io.StringIO(json.dumps(data)))

    def test_truncated(self):
        pool = BdrPool(PoolConfig(m=256, b=4, k=4))
        fp = io.StringIO()
        pool.dump(fp)
        data = json.loads(fp.getvalue())
        del data["drv"]
        with self.assertRaises(SnapshotError):
            BdrPool.load(io.StringIO(json.dumps(data)))
