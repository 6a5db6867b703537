#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_config.py

import os
import tempfile
import unittest

from anchorflow.config import (
    PUBLISHED_DEFAULTS, VARIANTS, Config, DegradeConfig, LossConfig, RopeConfig,
    SamplerConfig, TrainConfig, dump_config, load_config, parse_config,
)
from anchorflow.errors import ConfigError


class ShippedDefaultsTest(unittest.TestCase):
    """The published constants are what a fresh config carries."""

    def test_loss_multipliers(self):
        loss = Config().loss()
        self.assertEqual((loss.alpha_fm, loss.lambda_id, loss.lambda_h,
                          loss.omega_min), (0.75, 0.30, 0.25, 0.25))
        self.assertEqual(LossConfig(), loss)

    def test_sampler_and_mixing(self):
        cfg = Config()
        self.assertEqual(cfg.temperature, 1.0)
        self.assertEqual(cfg.sampler(), SamplerConfig(12, 4.0, 42))
        self.assertEqual(cfg.ref_mix, (0.3, 0.3, 0.2, 0.2))
        self.assertEqual(cfg.strength_buckets, (0.5, 0.3, 0.2))
        self.assertEqual(cfg.s_deg, 1.0)

    def test_defaults_match_the_published_table(self):
        cfg = Config()
        for key in ('alpha_fm', 'lambda_id', 'lambda_h', 'omega_min',
                    'temperature', 's_deg', 'steps', 'guidance', 'seed',
                    'ref_mix', 'strength_buckets', 'rope_theta'):
            with self.subTest(key=key):
                self.assertEqual(getattr(cfg, key), PUBLISHED_DEFAULTS[key])

    def test_full_scale_extents(self):
        cfg = Config.full_scale()
        self.assertEqual(cfg.memory_budget, PUBLISHED_DEFAULTS['memory_budget'])
        self.assertEqual(cfg.memory_budget, 256)
        self.assertEqual(cfg.rank, 16)
        self.assertEqual(cfg.rope_axis_dims, (32, 32, 32, 32))
        self.assertEqual(cfg.rope().head_dim, 128)
        backbone = cfg.backbone()
        self.assertEqual(backbone.memory_split, 128)
        self.assertEqual(backbone.head_dim, 128)

    def test_desk_scale_backbone(self):
        backbone = Config().backbone()
        self.assertEqual((backbone.d_model, backbone.n_heads, backbone.head_dim),
                         (64, 4, 16))
        self.assertEqual(backbone.rope.axis_dims, (4, 4, 4, 4))
        self.assertEqual(backbone.latent_shape, (4, 8, 8))
        self.assertEqual(backbone.grid, (4, 4))
        self.assertEqual(backbone.patch_dim, 16)
        self.assertEqual(backbone.memory_split, 4)
        self.assertEqual(backbone.memory_routes, 2)


class ParseConfigTest(unittest.TestCase):

    def test_comments_blank_lines_and_tuples(self):
        cfg = parse_config('\n# header\nsteps = 3   # fewer\n\n'
                           'ref_mix = 0.25, 0.25, 0.25, 0.25\nvariant = id\n')
        self.assertEqual(cfg.steps, 3)
        self.assertEqual(cfg.ref_mix, (0.25, 0.25, 0.25, 0.25))
        self.assertEqual(cfg.variant, 'id')
        self.assertEqual(cfg.guidance, 4.0)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('not_a_key = 1\n')
        self.assertIn('line 1', str(ctx.exception))

    def test_missing_equals_and_bad_value(self):
        with self.assertRaises(ConfigError):
            parse_config('steps 12\n')
        with self.assertRaises(ConfigError):
            parse_config('steps = many\n')
        # ConfigError is a ValueError too
        with self.assertRaises(ValueError):
            parse_config('lr = fast\n')

    def test_dump_parse_identity(self):
        cfg = Config(lambda_id=0.5, rope_axis_dims=(2, 2, 2, 2), d_model=16,
                     n_heads=2, variant='single_route')
        self.assertEqual(parse_config(dump_config(cfg)), cfg)

    def test_load_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'run.cfg')
            with open(path, 'w') as handle:
                handle.write('train_steps = 7\n')
            self.assertEqual(load_config(path).train_steps, 7)
            with self.assertRaises(ConfigError):
                load_config(os.path.join(directory, 'missing.cfg'))

    def test_shipped_config_file_parses_to_defaults(self):
        path = os.path.join(os.path.dirname(__file__), os.pardir, 'doc',
                            'default.cfg')
        self.assertEqual(load_config(path), Config())


class ValidationTest(unittest.TestCase):

    def test_rope_dims(self):
        with self.assertRaises(ConfigError):
            RopeConfig(axis_dims=(4, 4, 4)).validate()
        with self.assertRaises(ConfigError):
            RopeConfig(axis_dims=(4, 3, 4, 4)).validate()

    def test_backbone_head_dim_must_match_rope(self):
        with self.assertRaises(ConfigError):
            Config(rope_axis_dims=(2, 2, 2, 2)).backbone()

    def test_unknown_variant(self):
        with self.assertRaises(ConfigError):
            Config(variant='everything').backbone()
        self.assertEqual(VARIANTS[0], 'concat')
        self.assertEqual(VARIANTS[-1], 'full')

    def test_variant_ladder(self):
        flags = {}
        for variant in VARIANTS:
            backbone = Config(variant=variant).backbone()
            flags[variant] = (backbone.uses_residual, backbone.uses_identity,
                              backbone.memory_routes)
        self.assertEqual(flags, {
            'concat': (False, False, 0),
            'struct': (True, False, 0),
            'id': (True, True, 0),
            'single_route': (True, True, 1),
            'full': (True, True, 2),
        })

    def test_distributions(self):
        with self.assertRaises(ConfigError):
            DegradeConfig(strength_buckets=(0.5, 0.5, 0.5)).validate()
        with self.assertRaises(ConfigError):
            TrainConfig(ref_mix=(0.5, 0.5)).validate()
        with self.assertRaises(ConfigError):
            Config(ref_mix=(1.0, 0.0, 0.0, -0.0001)).training()

    def test_loss_and_sampler_ranges(self):
        with self.assertRaises(ConfigError):
            LossConfig(omega_min=0.0).validate()
        with self.assertRaises(ConfigError):
            LossConfig(lambda_id=-1.0).validate()
        with self.assertRaises(ConfigError):
            SamplerConfig(steps=0).validate()

    def test_memory_split(self):
        with self.assertRaises(ConfigError):
            Config(memory_budget=8, memory_split=8).backbone()
        self.assertEqual(Config(memory_budget=8, memory_split=3).backbone()
                         .memory_split, 3)


if __name__ == '__main__':
    unittest.main()
