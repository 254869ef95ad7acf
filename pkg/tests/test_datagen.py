from __future__ import annotations

import os
import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app.schemas.datagen import SynthConfig
from app.services.datagen_service import (
    augment_sphere_jitter,
    curve_points,
    make_curve_manifold,
    make_point_cluster,
    make_synthetic_dataset,
)


class CurveTests(unittest.TestCase):
    def setUp(self) -> None:
        self.clean = SynthConfig(noise_std=0.0)

    def test_known_points(self) -> None:
        X = make_curve_manifold(self.clean)
        self.assertEqual(X.shape, (3, 100))
        assert_allclose(X[:, 99], [1.0, 0.0, 0.0], atol=1e-12)
        assert_allclose(X[:, 24], [0.0, np.cos(0.2), np.sin(0.2)], atol=1e-12)

    def test_unit_norm_without_noise(self) -> None:
        X = make_curve_manifold(self.clean)
        assert_allclose(np.linalg.norm(X, axis=0), 1.0, atol=1e-12)

    def test_formula(self) -> None:
        X = curve_points(0.3, 4.0, 50)
        phi = 2 * np.pi * np.arange(1, 51) / 50
        lat = 0.3 * np.sin(4.0 * phi)
        assert_allclose(X[2], np.sin(lat), atol=1e-12)
        assert_allclose(X[0], np.cos(lat) * np.cos(phi), atol=1e-12)

    def test_noise_is_seeded(self) -> None:
        a = make_curve_manifold(SynthConfig(seed=4))
        b = make_curve_manifold(SynthConfig(seed=4))
        c = make_curve_manifold(SynthConfig(seed=5))
        assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


class PointClusterTests(unittest.TestCase):
    def test_noise_free_points_at_pole(self) -> None:
        X = make_point_cluster(SynthConfig(noise_std=0.0, points_per_manifold=7))
        assert_array_equal(X, np.tile([[0.0], [0.0], [1.0]], (1, 7)))

    def test_sample_mean(self) -> None:
        cfg = SynthConfig(points_per_manifold=10_000, seed=1)
        mean = make_point_cluster(cfg).mean(axis=1)
        bound = 4 * cfg.noise_std / np.sqrt(10_000)
        self.assertTrue(np.all(np.abs(mean - [0.0, 0.0, 1.0]) <= bound))

    def test_reproducible(self) -> None:
        cfg = SynthConfig(seed=9)
        assert_array_equal(make_point_cluster(cfg), make_point_cluster(cfg))


class DatasetTests(unittest.TestCase):
    def test_layout_and_reproducibility(self) -> None:
        cfg = SynthConfig(seed=3)
        data = make_synthetic_dataset(cfg)
        self.assertEqual(data.X.shape, (3, 200))
        self.assertEqual(data.n, 200)
        self.assertEqual(data.num_classes, 2)
        assert_array_equal(data.y[:100], 0)
        assert_array_equal(data.y[100:], 1)
        again = make_synthetic_dataset(cfg)
        self.assertEqual(data.X.tobytes(), again.X.tobytes())


class AugmentationTests(unittest.TestCase):
    def test_zero_sigma_keeps_unit_columns(self) -> None:
        X = make_curve_manifold(SynthConfig(noise_std=0.0))
        assert_allclose(augment_sphere_jitter(X, 0.0, np.random.default_rng(0)), X, atol=1e-15)

    def test_unit_columns_and_fresh_draws(self) -> None:
        X = make_synthetic_dataset(SynthConfig()).X
        rng = np.random.default_rng(0)
        a = augment_sphere_jitter(X, 0.05, rng)
        b = augment_sphere_jitter(X, 0.05, rng)
        assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-12)
        self.assertFalse(np.array_equal(a, b))

    def test_negative_sigma(self) -> None:
        with self.assertRaises(ValueError):
            augment_sphere_jitter(np.ones((3, 2)), -0.1, np.random.default_rng(0))


if __name__ == "__main__":
    unittest.main()
