#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_flow.py

import unittest

import numpy as np

from anchorflow.config import SamplerConfig
from anchorflow.errors import DomainError, ReferenceCountError, ShapeError
from anchorflow.flow import (
    Conditioning, guided_flow, initial_noise, integrate, noise, recover,
    sample_sigma, sigma_grid,
)

SHAPE = (4, 8, 8)
CONDITIONING = Conditioning(np.zeros((1, 16, 16)))


class OracleModel:
    """Returns the exact straight-line flow of a known clean latent."""
    latent_shape = SHAPE

    def __init__(self, z0: np.ndarray, seed: int) -> None:
        self.u_star = initial_noise(SHAPE, seed) - z0
        self.calls = []

    def __call__(self, z, sigma, conditioning, unconditional=False):
        self.calls.append(unconditional)
        return self.u_star.copy()


class FrozenBranches:
    """Per-step constant predictions that differ between the two branches."""
    latent_shape = SHAPE

    def __init__(self) -> None:
        rng = np.random.default_rng(11)
        self.cond = rng.normal(size=SHAPE)
        self.uncond = rng.normal(size=SHAPE)

    def __call__(self, z, sigma, conditioning, unconditional=False):
        base = self.uncond if unconditional else self.cond
        return base * np.cos(3.0 * sigma)


class NoiseTest(unittest.TestCase):

    def test_endpoints(self):
        rng = np.random.default_rng(0)
        z0, eps = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
        clean = noise(z0, eps, 0.0)
        np.testing.assert_array_equal(clean.z_sigma, z0)
        np.testing.assert_array_equal(clean.u_star, eps - z0)
        np.testing.assert_array_equal(noise(z0, eps, 1.0).z_sigma, eps)

    def test_recovery_identity(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            z0, eps = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
            sigma = float(rng.uniform())
            state = noise(z0, eps, sigma)
            recovered = recover(state.z_sigma, state.u_star, sigma)
            worst = max(worst, float(np.max(np.abs(recovered - z0))))
        self.assertLess(worst, 1e-6)

    def test_errors(self):
        with self.assertRaises(DomainError):
            noise(np.zeros(2), np.zeros(2), 1.5)
        with self.assertRaises(DomainError):
            noise(np.zeros(2), np.zeros(2), -0.1)
        with self.assertRaises(ShapeError):
            noise(np.zeros(2), np.zeros(3), 0.5)
        with self.assertRaises(ShapeError):
            recover(np.zeros(2), np.zeros(3), 0.5)


class RecoverTest(unittest.TestCase):

    def test_zero_prediction_and_zero_sigma(self):
        z = np.random.default_rng(2).normal(size=SHAPE)
        np.testing.assert_array_equal(recover(z, np.zeros(SHAPE), 0.7), z)
        np.testing.assert_array_equal(recover(z, np.ones(SHAPE), 0.0), z)

    def test_perfect_prediction(self):
        rng = np.random.default_rng(3)
        z0, eps = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
        state = noise(z0, eps, 0.3)
        np.testing.assert_allclose(recover(state.z_sigma, state.u_star, 0.3),
                                   z0, rtol=0, atol=1e-6)


class SigmaTest(unittest.TestCase):

    def test_deterministic_first_draw(self):
        first = sample_sigma(np.random.default_rng(42))
        self.assertEqual(first, sample_sigma(np.random.default_rng(42)))
        self.assertTrue(0.0 <= first <= 1.0)

    def test_uniform_law(self):
        rng = np.random.default_rng(42)
        draws = np.array([sample_sigma(rng) for _ in range(100000)])
        self.assertTrue(np.all((draws >= 0.0) & (draws <= 1.0)))
        self.assertAlmostEqual(float(draws.mean()), 0.5, delta=0.01)

    def test_grid(self):
        grid = sigma_grid(4)
        self.assertEqual(grid.tolist(), [1.0, 0.75, 0.5, 0.25, 0.0])
        with self.assertRaises(DomainError):
            sigma_grid(0)


class IntegrateTest(unittest.TestCase):

    def test_exact_flow_recovers_clean_latent_for_any_step_count(self):
        z0 = np.random.default_rng(4).normal(size=SHAPE)
        for steps in (1, 3, 12, 25):
            with self.subTest(steps=steps):
                model = OracleModel(z0, seed=42)
                out = integrate(model, CONDITIONING, SamplerConfig(steps, 4.0, 42))
                np.testing.assert_allclose(out, z0, rtol=0, atol=1e-5)

    def test_unit_guidance_skips_unconditional_branch(self):
        z0 = np.zeros(SHAPE)
        model = OracleModel(z0, seed=7)
        integrate(model, CONDITIONING, SamplerConfig(5, 1.0, 7))
        self.assertEqual(model.calls, [False] * 5)
        model = OracleModel(z0, seed=7)
        integrate(model, CONDITIONING, SamplerConfig(5, 4.0, 7))
        self.assertEqual(model.calls, [False, True] * 5)

    def test_unit_guidance_equals_conditional_integration(self):
        model = FrozenBranches()
        guided = integrate(model, CONDITIONING, SamplerConfig(6, 1.0, 3))
        z = initial_noise(SHAPE, 3)
        sigmas = sigma_grid(6)
        for sigma, nxt in zip(sigmas[:-1], sigmas[1:]):
            z = z + (nxt - sigma) * model(z, float(sigma), CONDITIONING)
        np.testing.assert_array_equal(guided, z)

    def test_output_is_affine_in_guidance(self):
        model = FrozenBranches()

        def run(scale):
            return integrate(model, CONDITIONING, SamplerConfig(6, scale, 9))

        base, one, two, five = run(0.0), run(1.0), run(2.0), run(5.0)
        np.testing.assert_allclose(two - base, 2.0 * (one - base), atol=1e-10)
        np.testing.assert_allclose(five - base, 5.0 * (one - base), atol=1e-10)

    def test_same_seed_is_bitwise_reproducible(self):
        model = FrozenBranches()
        cfg = SamplerConfig(4, 4.0, 42)
        first = integrate(model, CONDITIONING, cfg)
        second = integrate(model, CONDITIONING, cfg)
        self.assertEqual(first.tobytes(), second.tobytes())
        other = integrate(model, CONDITIONING, SamplerConfig(4, 4.0, 43))
        self.assertFalse(np.array_equal(first, other))

    def test_model_shape_mismatch(self):
        class Wrong:
            latent_shape = SHAPE

            def __call__(self, z, sigma, conditioning, unconditional=False):
                return np.zeros((2, 2))

        with self.assertRaises(ShapeError):
            guided_flow(Wrong(), np.zeros(SHAPE), 1.0, CONDITIONING, 4.0)


class ConditioningTest(unittest.TestCase):

    def test_reference_limit(self):
        image = np.zeros((1, 16, 16))
        self.assertEqual(Conditioning(image, [image] * 3).n_references, 3)
        with self.assertRaises(ReferenceCountError):
            Conditioning(image, [image] * 4)


if __name__ == '__main__':
    unittest.main()
