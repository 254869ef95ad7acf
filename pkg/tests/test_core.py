from __future__ import annotations

import os
import sys
import unittest
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app.core.config import Settings, get_settings
from app.core.errors import ConfigError, DimensionMismatch, MlcError, NotSpd, NumericError, ShapeError
from app.core.seeding import derive_rng, derive_seed, spawn_seeds


class SeedingTests(unittest.TestCase):
    def test_streams_are_reproducible_and_independent(self) -> None:
        a = derive_rng(3, "tcr").normal(size=4)
        b = derive_rng(3, "tcr").normal(size=4)
        c = derive_rng(3, "mlc").normal(size=4)
        self.assertTrue(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))
        self.assertNotEqual(derive_seed(3, "kmeans"), derive_seed(4, "kmeans"))
        self.assertLess(derive_seed(3, "kmeans"), 2**32)

    def test_spawned_seeds(self) -> None:
        seeds = spawn_seeds(5, 10)
        self.assertEqual(len(seeds), 10)
        self.assertEqual(len(set(seeds)), 10)
        self.assertEqual(seeds, spawn_seeds(5, 10))


class SettingsTests(unittest.TestCase):
    def test_environment_prefix(self) -> None:
        with mock.patch.dict(os.environ, {"MLC_RUN_SLOW_TESTS": "1", "MLC_LOG_LEVEL": "DEBUG"}):
            settings = Settings()
        self.assertTrue(settings.run_slow_tests)
        self.assertEqual(settings.log_level, "DEBUG")

    def test_cached_instance(self) -> None:
        get_settings.cache_clear()
        try:
            first = get_settings()
            with mock.patch.dict(os.environ, {"MLC_LOG_LEVEL": "ERROR"}):
                self.assertIs(get_settings(), first)
                get_settings.cache_clear()
                self.assertEqual(get_settings().log_level, "ERROR")
        finally:
            get_settings.cache_clear()


class ErrorTests(unittest.TestCase):
    def test_hierarchy(self) -> None:
        self.assertTrue(issubclass(NotSpd, NumericError))
        self.assertTrue(issubclass(DimensionMismatch, ShapeError))
        self.assertTrue(issubclass(DimensionMismatch, ValueError))
        self.assertTrue(issubclass(ConfigError, MlcError))

    def test_config_error_line(self) -> None:
        err = ConfigError("bad value", line=4)
        self.assertEqual(err.line, 4)
        self.assertEqual(str(err), "line 4: bad value")


if __name__ == "__main__":
    unittest.main()
