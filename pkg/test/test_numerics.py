#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_numerics.py

import math
import unittest

import numpy as np

from anchorflow.errors import DomainError, NonFiniteError, ShapeError
from anchorflow.numerics import (
    Parameter, ParameterRegistry, Tensor, attention, concat, div, gelu, index,
    layernorm, matmul, mean, power, relative_error, reshape, softmax, summed,
    numerical_gradient, snap_float32, transpose,
)

SEEDS = range(10)
TOLERANCE = 1e-4


class GradientCheckTest(unittest.TestCase):
    """Analytic gradients against central differences with step 1e-3."""

    def _check(self, build, shapes, seed):
        rng = np.random.default_rng(seed)
        params = [Parameter(rng.normal(size=shape)) for shape in shapes]
        weights = rng.normal(size=build(*params).shape)

        def scalar():
            return summed(build(*params) * weights).item()

        summed(build(*params) * weights).backward()
        for position, param in enumerate(params):
            numeric = numerical_gradient(scalar, param.data)
            error = relative_error(param.grad, numeric)
            self.assertLess(error, TOLERANCE,
                            'input {0}, seed {1}'.format(position, seed))

    def _check_all_seeds(self, build, shapes):
        for seed in SEEDS:
            with self.subTest(seed=seed):
                self._check(build, shapes, seed)

    def test_matmul(self):
        self._check_all_seeds(matmul, [(3, 4), (4, 2)])

    def test_batched_matmul_broadcast(self):
        self._check_all_seeds(matmul, [(2, 3, 4), (4, 5)])

    def test_broadcast_add_and_mul(self):
        self._check_all_seeds(lambda a, b: (a + b) * b, [(3, 4), (4,)])

    def test_div_and_power(self):
        self._check_all_seeds(lambda a, b: div(a, b * b + 1.0)
                              + power(a * a + 1.0, 0.5), [(2, 3), (2, 3)])

    def test_softmax(self):
        self._check_all_seeds(lambda x: softmax(x, axis=-1), [(3, 5)])

    def test_layernorm_with_affine(self):
        self._check_all_seeds(layernorm, [(4, 6), (6,), (6,)])

    def test_gelu(self):
        self._check_all_seeds(gelu, [(3, 4)])

    def test_attention(self):
        self._check_all_seeds(attention, [(2, 3, 4), (2, 5, 4), (2, 5, 4)])

    def test_shape_ops(self):
        def build(a, b):
            joined = concat([a, b], axis=0)
            moved = transpose(reshape(joined, (3, 3, 2)), (2, 0, 1))
            column = reshape(mean(a, axis=0)[:2], (2, 1))
            return index(moved, (slice(None), 1)) * column
        self._check_all_seeds(build, [(2, 3), (4, 3)])


class MatmulTest(unittest.TestCase):

    def test_examples(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), b).data, b)
        self.assertEqual(matmul(np.array([[1.0, 0.0]]),
                                np.array([[5.0], [7.0]])).data.tolist(), [[5.0]])

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))
        with self.assertRaises(ShapeError):
            matmul(np.ones(3), np.ones((3, 1)))


class SoftmaxTest(unittest.TestCase):

    def test_examples(self):
        np.testing.assert_allclose(softmax(np.zeros(3)).data, [1 / 3] * 3)
        np.testing.assert_allclose(softmax(np.array([math.log(2.0), 0.0])).data,
                                   [2 / 3, 1 / 3], rtol=0, atol=1e-12)
        stable = softmax(np.array([1000.0, 0.0])).data
        self.assertEqual(stable[0], 1.0)
        self.assertLess(stable[1], 1e-300)

    def test_sums_to_one_for_large_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-1e4, 1e4, size=(4, 7))
            sums = softmax(x, axis=-1).data.sum(axis=-1)
            np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-6)

    def test_empty_input(self):
        with self.assertRaises(DomainError):
            softmax(np.zeros(0))


class LayernormTest(unittest.TestCase):

    def test_constant_row_is_zero(self):
        out = layernorm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4)).data
        np.testing.assert_array_equal(out, np.zeros((1, 4)))

    def test_two_values(self):
        out = layernorm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2)).data
        np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-5)

    def test_row_statistics(self):
        x = np.random.default_rng(0).normal(3.0, 5.0, size=(5, 8))
        out = layernorm(x).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)

    def test_single_feature_axis(self):
        with self.assertRaises(ShapeError):
            layernorm(np.ones((3, 1)))


class AttentionTest(unittest.TestCase):

    def test_single_key_returns_value(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(1, 4))
        out = attention(rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), v)
        np.testing.assert_allclose(out.data, np.repeat(v, 3, axis=0),
                                   rtol=0, atol=1e-12)

    def test_peaked_query_selects_row(self):
        keys = np.eye(4)
        values = np.arange(16.0).reshape(4, 4)
        query = 200.0 * keys[2:3]
        out = attention(query, keys, values).data
        np.testing.assert_allclose(out, values[2:3], atol=1e-6)

    def test_head_dim_mismatch(self):
        with self.assertRaises(ShapeError):
            attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))

    def test_additive_mask(self):
        mask = np.array([[0.0, -1e9]])
        out = attention(np.ones((1, 2)), np.ones((2, 2)),
                        np.array([[1.0, 1.0], [5.0, 5.0]]), mask).data
        np.testing.assert_allclose(out, [[1.0, 1.0]])


class EngineTest(unittest.TestCase):

    def test_shared_subexpression_accumulates(self):
        x = Parameter(np.array([1.0, -2.0, 0.5]))
        (x * x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, 2 * x.data + 1)

    def test_mixed_array_expressions_stay_tensors(self):
        x = Parameter(np.ones(2))
        self.assertIsInstance(np.full(2, 3.0) - x, Tensor)
        self.assertIsInstance(np.eye(2) @ Tensor(np.ones((2, 1))), Tensor)

    def test_backward_needs_scalar(self):
        with self.assertRaises(ShapeError):
            (Parameter(np.ones(3)) * 2.0).backward()

    def test_non_finite_is_raised_at_the_op(self):
        with self.assertRaises(NonFiniteError) as ctx:
            div(np.ones(2), np.zeros(2))
        self.assertIn('div', str(ctx.exception))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        q, k, v = (rng.normal(size=(2, 6, 4)) for _ in range(3))
        first = attention(q, k, v).data
        second = attention(q, k, v).data
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_constants_do_not_track_gradients(self):
        out = matmul(np.ones((2, 2)), np.ones((2, 2)))
        self.assertFalse(out.requires_grad)
        self.assertIsNone(out.ctx)


class ParameterRegistryTest(unittest.TestCase):

    def test_untouched_parameters_get_exact_zero(self):
        registry = ParameterRegistry()
        used = registry.create('used', np.ones(3))
        registry.create('unused', np.ones((2, 2)))
        (used * 2.0).sum().backward()
        grads = registry.gradients()
        self.assertEqual(list(grads), ['used', 'unused'])
        np.testing.assert_array_equal(grads['used'], np.full(3, 2.0))
        np.testing.assert_array_equal(grads['unused'], np.zeros((2, 2)))
        registry.zero_grad()
        self.assertIsNone(used.grad)

    def test_create_snaps_to_float32(self):
        registry = ParameterRegistry()
        param = registry.create('w', np.array([0.1]))
        self.assertEqual(param.data[0], float(np.float32(0.1)))
        self.assertEqual(snap_float32(param.data).tobytes(),
                         param.data.tobytes())

    def test_duplicate_and_state_errors(self):
        registry = ParameterRegistry()
        registry.create('w', np.zeros(2))
        with self.assertRaises(KeyError):
            registry.create('w', np.zeros(2))
        with self.assertRaises(KeyError):
            registry.load_state({'v': np.zeros(2)})
        with self.assertRaises(ShapeError):
            registry.load_state({'w': np.zeros(3)})
        registry.load_state({'w': np.array([1.0, 2.0])})
        self.assertEqual(registry['w'].data.tolist(), [1.0, 2.0])
        self.assertEqual(registry.size(), 2)
        self.assertIn('w', registry)


class RelativeErrorTest(unittest.TestCase):

    def test_values(self):
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)
        self.assertAlmostEqual(relative_error(np.array([1.0, 0.0]),
                                              np.array([0.0, 0.0])), 1.0)
        self.assertEqual(relative_error(np.zeros(2), np.zeros(2)), 0.0)


if __name__ == '__main__':
    unittest.main()
