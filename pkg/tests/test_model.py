from __future__ import annotations

import os
import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app.core.errors import DimensionMismatch, ShapeMismatch, TraceMismatch
from app.schemas.model import OptimizerConfig
from app.services.model_service import (
    HeadPair,
    MlpParams,
    SgdState,
    average_aug_features,
    average_aug_features_backward,
    average_aug_memberships,
    average_aug_memberships_backward,
    copy_feature_to_cluster,
    head_backward,
    head_forward,
    init_head_pair,
    init_mlp_params,
    sgd_step,
)
from tests._fd import numeric_grad, relative_error, unit_columns


def _params(seed: int = 0, D: int = 3, h: int = 5, d: int = 3) -> MlpParams:
    return init_mlp_params(D, h, d, np.random.default_rng(seed))


class HeadForwardTests(unittest.TestCase):
    def test_constant_network(self) -> None:
        p = MlpParams(w1=np.zeros((4, 3)), b1=np.zeros(4), w2=np.zeros((3, 4)), b2=np.array([1.0, 0.0, 0.0]))
        Z, _ = head_forward(p, np.random.default_rng(0).normal(size=(3, 6)))
        assert_array_equal(Z, np.tile([[1.0], [0.0], [0.0]], (1, 6)))

    def test_unit_columns_and_recomputation(self) -> None:
        p = _params(1)
        X = np.random.default_rng(2).normal(size=(3, 10))
        Z, trace = head_forward(p, X)
        assert_allclose(np.linalg.norm(Z, axis=0), 1.0, atol=1e-12)
        v = p.w2 @ np.maximum(p.w1 @ X + p.b1[:, None], 0.0) + p.b2[:, None]
        assert_allclose(Z, v / np.linalg.norm(v, axis=0), atol=1e-12)
        self.assertIs(trace.Z, Z)

    def test_input_dimension_checked(self) -> None:
        with self.assertRaises(DimensionMismatch):
            head_forward(_params(), np.ones((4, 2)))

    def test_init_shapes_and_bounds(self) -> None:
        p = init_mlp_params(3, 100, 3, np.random.default_rng(0))
        self.assertEqual((p.input_dim, p.hidden, p.output_dim), (3, 100, 3))
        self.assertLessEqual(np.max(np.abs(p.w1)), 1.0 / np.sqrt(3))
        self.assertLessEqual(np.max(np.abs(p.w2)), 1.0 / np.sqrt(100))
        hp = init_head_pair(3, 8, 3, np.random.default_rng(0))
        self.assertFalse(np.array_equal(hp.feature.w1, hp.cluster.w1))

    def test_inconsistent_shapes_rejected(self) -> None:
        with self.assertRaises(ShapeMismatch):
            MlpParams(w1=np.zeros((4, 3)), b1=np.zeros(5), w2=np.zeros((3, 4)), b2=np.zeros(3))


class HeadBackwardTests(unittest.TestCase):
    def test_matches_finite_differences(self) -> None:
        for seed in range(20):
            rng = np.random.default_rng(30 + seed)
            p = _params(seed, D=3, h=5, d=3)
            X = rng.normal(size=(3, 6))
            upstream = rng.normal(size=(3, 6))
            _, trace = head_forward(p, X)
            grads = head_backward(p, trace, upstream)
            for name, tensor in p.tensors():

                def upstream_value(t: np.ndarray, name: str = name) -> float:
                    q = p.copy()
                    setattr(q, name, t)
                    return float(np.sum(upstream * head_forward(q, X)[0]))

                numeric = numeric_grad(upstream_value, tensor)
                self.assertLess(relative_error(getattr(grads, name), numeric), 1e-4, msg=f"{name}, seed {seed}")

    def test_zero_and_radial_upstream(self) -> None:
        p = _params(3)
        X = np.random.default_rng(4).normal(size=(3, 7))
        Z, trace = head_forward(p, X)
        for upstream in (np.zeros_like(Z), Z * np.linspace(0.5, 2.0, 7)[None, :]):
            grads = head_backward(p, trace, upstream)
            for _, g in grads.tensors():
                assert_allclose(g, 0.0, atol=1e-12)

    def test_trace_mismatch(self) -> None:
        p = _params(0)
        _, trace = head_forward(p, np.ones((3, 4)))
        with self.assertRaises(TraceMismatch):
            head_backward(p, trace, np.ones((3, 5)))
        with self.assertRaises(TraceMismatch):
            head_backward(_params(0, h=7), trace, np.ones((3, 4)))


class CopyTests(unittest.TestCase):
    def test_cluster_becomes_independent_copy(self) -> None:
        hp = init_head_pair(3, 6, 3, np.random.default_rng(0))
        feature_before = hp.feature.copy()
        copied = copy_feature_to_cluster(hp)
        X = np.random.default_rng(1).normal(size=(3, 5))
        self.assertTrue(np.array_equal(head_forward(copied.cluster, X)[0], head_forward(copied.feature, X)[0]))
        copied.cluster.w1[0, 0] += 1.0
        assert_array_equal(copied.feature.w1, feature_before.w1)
        assert_array_equal(hp.feature.w1, feature_before.w1)

    def test_output_dims_must_match(self) -> None:
        rng = np.random.default_rng(0)
        hp = HeadPair(feature=init_mlp_params(3, 4, 3, rng), cluster=init_mlp_params(3, 4, 2, rng))
        with self.assertRaises(ShapeMismatch):
            copy_feature_to_cluster(hp)


class SgdTests(unittest.TestCase):
    def setUp(self) -> None:
        self.p = _params(0)
        self.g = _params(1)

    def _state(self, lr: float, momentum: float, wd: float) -> SgdState:
        return SgdState.for_params(self.p, OptimizerConfig(lr=lr, momentum=momentum, weight_decay=wd))

    def test_zero_settings_are_identity(self) -> None:
        new, _ = sgd_step(self.p, self.g, self._state(0.0, 0.0, 0.0))
        for name, t in self.p.tensors():
            assert_array_equal(getattr(new, name), t)

    def test_plain_ascent(self) -> None:
        new, _ = sgd_step(self.p, self.g, self._state(0.1, 0.0, 0.0), direction=1)
        for name, t in self.p.tensors():
            assert_allclose(getattr(new, name), t + 0.1 * getattr(self.g, name), atol=1e-15)

    def test_two_momentum_steps(self) -> None:
        state = self._state(0.1, 0.9, 0.0)
        p1, state = sgd_step(self.p, self.g, state)
        p2, state = sgd_step(p1, self.g, state)
        for name, t in self.p.tensors():
            g = getattr(self.g, name)
            assert_allclose(getattr(state.velocity, name), 1.9 * g, atol=1e-15)
            assert_allclose(getattr(p2, name), t + 0.1 * g + 0.1 * 1.9 * g, atol=1e-14)

    def test_weight_decay_and_descent(self) -> None:
        new, _ = sgd_step(self.p, self.g, self._state(0.1, 0.0, 0.5), direction=-1)
        for name, t in self.p.tensors():
            assert_allclose(getattr(new, name), t - 0.1 * (getattr(self.g, name) + 0.5 * t), atol=1e-14)

    def test_shape_and_direction_checks(self) -> None:
        with self.assertRaises(ShapeMismatch):
            sgd_step(self.p, _params(1, h=7), self._state(0.1, 0.9, 0.0))
        with self.assertRaises(ValueError):
            sgd_step(self.p, self.g, self._state(0.1, 0.9, 0.0), direction=0)


class AugmentationAveragingTests(unittest.TestCase):
    def test_single_and_identical_views(self) -> None:
        Z = unit_columns(np.random.default_rng(0), 3, 5)
        assert_allclose(average_aug_features([Z])[0], Z, atol=1e-15)
        assert_allclose(average_aug_features([Z, Z.copy()])[0], Z, atol=1e-15)

    def test_antipodal_columns_floor_to_zero(self) -> None:
        Z = unit_columns(np.random.default_rng(1), 3, 2)
        Zp = Z.copy()
        Zp[:, 1] = -Z[:, 1]
        with self.assertLogs("app.services.model_service", level="WARNING"):
            out, _ = average_aug_features([Z, Zp])
        assert_allclose(out[:, 1], 0.0, atol=1e-15)
        assert_allclose(out[:, 0], Z[:, 0], atol=1e-15)

    def test_feature_backward(self) -> None:
        rng = np.random.default_rng(2)
        Zs = [unit_columns(rng, 3, 4) for _ in range(3)]
        upstream = rng.normal(size=(3, 4))
        _, trace = average_aug_features(Zs)
        grads = average_aug_features_backward(trace, upstream)
        for a in range(3):

            def value(z: np.ndarray, a: int = a) -> float:
                views = list(Zs)
                views[a] = z
                return float(np.sum(upstream * average_aug_features(views)[0]))

            self.assertLess(relative_error(grads[a], numeric_grad(value, Zs[a])), 1e-6)

    def test_membership_average(self) -> None:
        P1 = np.eye(4)
        P2 = np.eye(4)[[2, 0, 3, 1]]
        assert_array_equal(average_aug_memberships([P1]), P1)
        mean = average_aug_memberships([P1, P2])
        assert_allclose(mean.sum(axis=0), 1.0, atol=1e-12)
        assert_allclose(mean.sum(axis=1), 1.0, atol=1e-12)
        for g in average_aug_memberships_backward(2, np.ones((4, 4))):
            assert_allclose(g, 0.5)

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ShapeMismatch):
            average_aug_features([np.ones((3, 2)), np.ones((3, 3))])
        with self.assertRaises(ShapeMismatch):
            average_aug_memberships([np.ones((2, 3))])
        with self.assertRaises(ShapeMismatch):
            average_aug_features([])


if __name__ == "__main__":
    unittest.main()
