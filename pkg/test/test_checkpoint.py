#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_checkpoint.py

import io
import os
import struct
import tempfile
import unittest

import numpy as np

from anchorflow.backbone import RestorationModel
from anchorflow.checkpoint import (
    MAGIC, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
)
from anchorflow.errors import CheckpointError
from anchorflow.numerics import snap_float32
from test.helpers import face, perturb_all, tiny_config


def _trained_looking(config, seed):
    model = RestorationModel(config)
    perturb_all(model, seed)
    for _, param in model.registry.items():
        param.data = snap_float32(param.data)
    return model


def _raw(model, metadata=None):
    handle = io.BytesIO()
    write_checkpoint(handle, model, metadata)
    return handle.getvalue()


class CheckpointRoundTripTest(unittest.TestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.directory.name, 'model.icfl')

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_forward_is_bitwise_identical_after_reload(self):
        model = _trained_looking(tiny_config(), 1)
        save_checkpoint(self.path, model, {'train_steps': 3})
        loaded, metadata = load_checkpoint(self.path)
        self.assertEqual(metadata, {'train_steps': '3'})
        self.assertEqual(loaded.config, model.config)
        degraded, refs = face(2, 1), [face(2, 2)]
        rng = np.random.default_rng(3)
        for _ in range(10):
            z, sigma = rng.normal(size=(4, 8, 8)), float(rng.uniform())
            expected = model.predict_flow(z, degraded, refs, sigma).data
            actual = loaded.predict_flow(z, degraded, refs, sigma).data
            self.assertEqual(actual.tobytes(), expected.tobytes())

    def test_variant_travels_with_the_config(self):
        model = _trained_looking(tiny_config(variant='id'), 4)
        save_checkpoint(self.path, model)
        loaded, metadata = load_checkpoint(self.path)
        self.assertEqual(loaded.cfg.variant, 'id')
        self.assertEqual(metadata, {})

    def test_layout(self):
        data = _raw(RestorationModel(tiny_config()))
        self.assertEqual(data[:4], MAGIC)
        self.assertEqual(struct.unpack('<I', data[4:8])[0], 1)
        text, tensors = read_checkpoint(data)
        self.assertIn('variant = full', text)
        self.assertIn('patch_embed.weight', tensors)
        self.assertEqual(tensors['structure.cross.0.gate'].tolist(), [0.0])

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.directory.name, 'absent.icfl'))


class CorruptCheckpointTest(unittest.TestCase):

    def setUp(self) -> None:
        self.data = _raw(RestorationModel(tiny_config()), {'note': 'x'})

    def test_bad_magic(self):
        with self.assertRaises(CheckpointError) as ctx:
            read_checkpoint(b'XXXX' + self.data[4:])
        self.assertIn('magic', str(ctx.exception))

    def test_unknown_version(self):
        with self.assertRaises(CheckpointError):
            read_checkpoint(self.data[:4] + struct.pack('<I', 2) + self.data[8:])

    def test_truncated(self):
        for cut in (2, 10, len(self.data) // 2, len(self.data) - 1):
            with self.subTest(cut=cut):
                with self.assertRaises(CheckpointError):
                    read_checkpoint(self.data[:cut])

    def test_trailing_bytes(self):
        with self.assertRaises(CheckpointError) as ctx:
            read_checkpoint(self.data + b'\x00')
        self.assertIn('trailing', str(ctx.exception))

    def test_tensors_must_match_the_config(self):
        text, _ = read_checkpoint(self.data)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'other.icfl')
            other = RestorationModel(tiny_config(rank=3))
            save_checkpoint(path, other)
            with open(path, 'rb') as handle:
                raw = handle.read()
            # swap in the rank-2 config text, keeping the rank-3 tensors
            header = len(MAGIC) + 8
            old_len = struct.unpack('<I', raw[8:12])[0]
            body = raw[header + old_len:]
            encoded = text.encode('utf-8')
            with open(path, 'wb') as handle:
                handle.write(raw[:8] + struct.pack('<I', len(encoded)) + encoded
                             + body)
            with self.assertRaises(CheckpointError):
                load_checkpoint(path)


if __name__ == '__main__':
    unittest.main()
