import io
import unittest

from vbdr.baseline.traffic import GenConfig, HostSpec
from vbdr.bench import (
    ESTIMATORS,
    REPORT_HEADER,
    BenchError,
    BenchRow,
    run_benchmark,
    write_report
)
from vbdr.pool import PoolConfig


class TestBenchmark(unittest.TestCase):

    def setUp(self):
        self.gen = GenConfig(hosts=[HostSpec(1, 2000), HostSpec(2, 50)],
                             slices=5, k=3, background_hosts=10,
                             background_n=20, seed=1)
        self.config = PoolConfig(m=1 << 12, b=6, k=3)

    def test_all_estimators(self):
        rows = run_benchmark(self.config, self.gen, timing=False)
        self.assertEqual([r.estimator for r in rows], list(ESTIMATORS))

        by_name = {r.estimator: r for r in rows}
        self.assertEqual(by_name["exact"].mean_rel_error, 0.0)
        self.assertIsNone(by_name["exact"].bits_per_counter)
        # same registers, same windowed ranks
        for name in ("serial", "gfast", "lfpm-hll"):
            self.assertEqual(by_name[name].mean_rel_error,
                             by_name["gsmall"].mean_rel_error)
        self.assertLess(by_name["gsmall"].bits_per_counter,
                        by_name["gfast"].bits_per_counter)
        self.assertTrue(all(r.events_per_sec is None for r in rows))

    def test_timing(self):
        rows = run_benchmark(self.config, self.gen, ["gfast"], workers=2)
        self.assertGreater(rows[0].events_per_sec, 0)

    def test_window_mismatch(self):
        with self.assertRaises(BenchError):
            run_benchmark(PoolConfig(m=1 << 12, b=6, k=4), self.gen)

    def test_unknown_estimator(self):
        with self.assertRaises(BenchError):
            run_benchmark(self.config, self.gen, ["minhash"])

    def test_report(self):
        fp = io.StringIO()
        write_report([BenchRow("gsmall", 0.1, 0.05, 0.2, 96, 393216, None)],
                     fp)
        lines = fp.getvalue().splitlines()
        self.assertEqual(lines[0], ','.join(REPORT_HEADER))
        self.assertEqual(lines[1],
                         "gsmall,0.100000,0.050000,0.200000,96,393216,")
