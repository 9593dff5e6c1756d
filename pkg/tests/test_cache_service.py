import unittest
from concurrent.futures import ThreadPoolExecutor
from unittest import mock

from sums.core.gwishart import NormConstEstimate
from sums.services.cache_service import NormConstCache


class TestNormConstCache(unittest.TestCase):

    def setUp(self):
        self.cache = NormConstCache()

    def test_get_and_set(self):
        key = (3.0, 0.5, ((0, 1),))
        self.assertIsNone(self.cache.get(key))
        self.cache.set(key, NormConstEstimate(log_value=1.5))
        self.assertEqual(self.cache.get(key).log_value, 1.5)
        stats = self.cache.get_stats()
        self.assertEqual(stats["total_entries"], 1)
        self.assertEqual(stats["hits"], 1)
        self.assertEqual(stats["misses"], 1)

    def test_get_or_compute_computes_once(self):
        estimate = NormConstEstimate(log_value=-2.0, std_error=0.1)
        compute = mock.Mock(return_value=estimate)
        for _ in range(3):
            self.assertEqual(self.cache.get_or_compute(("g",), compute).log_value, -2.0)
        compute.assert_called_once()

    def test_clear(self):
        self.cache.set(("g",), NormConstEstimate(log_value=0.0))
        self.cache.clear()
        self.assertEqual(self.cache.get_stats()["total_entries"], 0)
        self.assertEqual(self.cache.get_stats()["hits"], 0)

    def test_concurrent_access(self):
        def work(i):
            return self.cache.get_or_compute(
                (i % 5,), lambda: NormConstEstimate(log_value=float(i % 5))
            )

        with ThreadPoolExecutor(max_workers=8) as executor:
            results = list(executor.map(work, range(200)))
        self.assertEqual(
            [r.log_value for r in results], [float(i % 5) for i in range(200)]
        )
        self.assertEqual(self.cache.get_stats()["total_entries"], 5)
