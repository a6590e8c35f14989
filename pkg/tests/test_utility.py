import unittest

from vbdr.utility import ceil_log2, format_ip, parse_ip, parse_slices


class TestCeilLog2(unittest.TestCase):
    def test_powers_of_two(self):
        for i in range(20):
            self.assertEqual(ceil_log2(1 << i), i)

    def test_between_powers(self):
        self.assertEqual(ceil_log2(3), 2)
        self.assertEqual(ceil_log2(24), 5)
        self.assertEqual(ceil_log2(30), 5)
        self.assertEqual(ceil_log2(33), 6)

    def test_non_positive(self):
        with self.assertRaises(ValueError):
            ceil_log2(0)


class TestParseIp(unittest.TestCase):
    def test_dotted(self):
        self.assertEqual(parse_ip("10.0.0.1"), 167772161)

    def test_decimal(self):
        self.assertEqual(parse_ip("167772161"), 167772161)
        self.assertEqual(parse_ip(" 0 "), 0)

    def test_too_large(self):
        with self.assertRaises(ValueError):
            parse_ip(str(1 << 32))

    def test_garbage(self):
        for text in ("10.0.0", "10.0.0.256", "host", "-1", ""):
            with self.subTest(text=text):
                with self.assertRaises(ValueError):
                    parse_ip(text)

    def test_format(self):
        self.assertEqual(format_ip(167772161), "10.0.0.1")
        self.assertEqual(format_ip(0xFFFFFFFF), "255.255.255.255")


class TestParseSlices(unittest.TestCase):
    def test_all(self):
        for text in ("all", "*", ""):
            self.assertIsNone(parse_slices(text))

    def test_range(self):
        self.assertEqual(parse_slices("2-4"), frozenset({2, 3, 4}))

    def test_list(self):
        self.assertEqual(parse_slices("1, 3,5-6"), frozenset({1, 3, 5, 6}))

    def test_empty_range(self):
        with self.assertRaises(ValueError):
            parse_slices("4-2")

    def test_not_a_number(self):
        with self.assertRaises(ValueError):
            parse_slices("a-b")
