#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test/helpers.py

import os

import numpy as np

from anchorflow.config import Config
from anchorflow.data import Nuisance, SyntheticIdentity, render

SLOW = os.environ.get('ANCHORFLOW_SLOW') == '1'
SLOW_REASON = 'set ANCHORFLOW_SLOW=1 to run the acceptance runs'


def tiny_config(**changes: object) -> Config:
    """A model small enough for finite differences: d_model 16, 2 heads of 8."""
    cfg = Config(d_model=16, n_heads=2, rope_axis_dims=(2, 2, 2, 2),
                 n_double_blocks=1, n_single_blocks=1, freq_dim=8,
                 memory_budget=4, rank=2, id_dim=8, n_identities=4,
                 batch_size=2, train_steps=3)
    return cfg.replace(**changes)


def face(seed: int, nuisance_seed: int = None, size: int = 16) -> np.ndarray:
    """One synthetic identity render."""
    nuisance = Nuisance()
    if nuisance_seed is not None:
        nuisance = Nuisance.sample(np.random.default_rng(nuisance_seed))
    return render(SyntheticIdentity.from_seed(seed, size), nuisance, size)


def perturb_all(model, seed: int, std: float = 0.05) -> None:
    """Give every parameter, zero-initialised ones included, a random offset."""
    rng = np.random.default_rng(seed)
    for _, param in model.registry.items():
        param.data = param.data + rng.normal(0.0, std, size=param.shape)
