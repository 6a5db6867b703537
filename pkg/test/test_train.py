#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_train.py

import csv
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from anchorflow.backbone import RestorationModel
from anchorflow.config import Config
from anchorflow.data import make_dataset
from anchorflow.errors import NonFiniteError, TrainingDivergedError
from anchorflow.numerics import ParameterRegistry
from anchorflow.train import (
    LOG_FIELDS, MomentumSgd, smooth_curve, train, write_loss_log,
)
from test.helpers import SLOW, SLOW_REASON, tiny_config


class MomentumSgdTest(unittest.TestCase):

    def setUp(self) -> None:
        self.registry = ParameterRegistry()
        self.param = self.registry.create('w', np.array([1.0, -2.0]))

    def test_momentum_accumulates(self):
        optimizer = MomentumSgd(self.registry, lr=0.5, momentum=0.5)
        for _ in range(2):
            self.registry.zero_grad()
            (self.param * 1.0).sum().backward()
            optimizer.step()
        # v1 = 1, v2 = 1.5; total move lr * 2.5
        np.testing.assert_allclose(self.param.data, [1.0 - 1.25, -2.0 - 1.25])

    def test_clipping_and_float32_grid(self):
        optimizer = MomentumSgd(self.registry, lr=0.1, momentum=0.0,
                                clip_norm=1.0)
        self.registry.zero_grad()
        (self.param * np.array([30.0, 40.0])).sum().backward()
        norm = optimizer.step()
        self.assertAlmostEqual(norm, 50.0)
        np.testing.assert_allclose(self.param.data, [1.0 - 0.06, -2.0 - 0.08],
                                   rtol=1e-6)
        self.assertEqual(self.param.data.astype(np.float32).astype(float).tobytes(),
                         self.param.data.tobytes())

    def test_non_finite_gradient(self):
        optimizer = MomentumSgd(self.registry, lr=0.1)
        self.param.grad = np.array([np.inf, 0.0])
        with self.assertRaises(NonFiniteError):
            optimizer.step()


class TrainTest(unittest.TestCase):

    def setUp(self) -> None:
        self.corpus = make_dataset(4, 3, seed=1)

    def test_zero_steps_leaves_the_initialisation(self):
        config = tiny_config(train_steps=0)
        result = train(config, self.corpus)
        fresh = RestorationModel(config)
        self.assertEqual(result.curve, [])
        for name, param in result.model.registry.items():
            np.testing.assert_array_equal(param.data, fresh.registry[name].data)

    def test_same_seed_same_curve(self):
        config = tiny_config()
        first = train(config, self.corpus)
        second = train(config, self.corpus)
        self.assertEqual(len(first.curve), 3)
        self.assertEqual(first.curve, second.curve)
        self.assertEqual([row['step'] for row in first.curve], [0, 1, 2])
        self.assertEqual(set(first.curve[0]), set(LOG_FIELDS))
        for name, param in first.model.registry.items():
            self.assertEqual(param.data.tobytes(),
                             second.model.registry[name].data.tobytes())

    def test_parameters_move(self):
        config = tiny_config(train_steps=1)
        result = train(config, self.corpus)
        fresh = RestorationModel(config)
        moved = [name for name, param in result.model.registry.items()
                 if not np.array_equal(param.data, fresh.registry[name].data)]
        self.assertIn('patch_embed.weight', moved)
        self.assertIn('identity.psi_double.0.weight', moved)
        self.assertIn('identity.psi_single.0.weight', moved)

    def test_divergence_is_reported(self):
        config = tiny_config(train_steps=2)
        with mock.patch.object(MomentumSgd, 'step',
                           side_effect=NonFiniteError('gradient norm is not finite')):
            with self.assertRaises(TrainingDivergedError) as ctx:
                train(config, self.corpus)
        self.assertIn('step 0', str(ctx.exception))

    def test_breakdown_holds_every_step(self):
        result = train(tiny_config(), self.corpus)
        loss = Config().loss()
        for row in result.curve:
            self.assertTrue(np.isfinite(row['total']))
            self.assertGreaterEqual(row['total'], loss.alpha_fm * row['l_fm'] - 1e-9)


class CurveTest(unittest.TestCase):

    def test_smooth_curve(self):
        out = smooth_curve([1.0, 3.0, 5.0, 7.0], window=2)
        np.testing.assert_allclose(out, [1.0, 2.0, 4.0, 6.0])
        np.testing.assert_allclose(smooth_curve([2.0] * 5), [2.0] * 5)

    def test_loss_log(self):
        rows = [dict({key: 0.5 for key in LOG_FIELDS}, step=step)
                for step in range(3)]
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'loss.csv')
            write_loss_log(path, rows)
            with open(path, newline='') as handle:
                read = list(csv.DictReader(handle))
        self.assertEqual(len(read), 3)
        self.assertEqual(tuple(read[0]), LOG_FIELDS)
        self.assertEqual(read[2]['step'], '2')


@unittest.skipUnless(SLOW, SLOW_REASON)
class TrainingSanityTest(unittest.TestCase):

    def test_flow_loss_halves_in_two_hundred_steps(self):
        result = train(Config())
        smoothed = smooth_curve(result.column('l_fm'), window=10)
        self.assertEqual(len(smoothed), 200)
        self.assertLess(smoothed[-1], 0.5 * smoothed[9])


if __name__ == '__main__':
    unittest.main()
