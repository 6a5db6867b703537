#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/degrade.py

"""Deterministic synthetic degradation chain.

A strength in ``0..16`` and a seed fully determine the chain::

    gaussian_blur  sigma = 0.1 + 0.2 s
    downsample     factor = 1 + (scale - 1) s / 16     (area)
    upsample       back to the input size              (bilinear)
    gaussian_noise sigma = 0.005 s
    value_quantize levels = 2 ** (8 - s // 4)

with ``scale`` drawn from ``min_scale..max_scale`` by the seed. Strength
0 is the empty chain.

>>> build_spec(0, seed=42).chain
()
>>> [op for op, _ in build_spec(16, seed=42).chain]
['gaussian_blur', 'downsample', 'upsample', 'gaussian_noise', 'value_quantize']
"""

from typing import Dict, Tuple

import logging
from dataclasses import dataclass

import cv2
import numpy as np

from anchorflow.config import DegradeConfig
from anchorflow.errors import DomainError, ShapeError

__all__ = ['MAX_STRENGTH', 'STRENGTH_BUCKETS', 'DegradationSpec',
           'sample_strength', 'build_spec', 'apply_chain', 'degrade']

MAX_STRENGTH = 16
STRENGTH_BUCKETS = ((0, 3), (4, 8), (9, 16))

logger = logging.getLogger(__name__)

Step = Tuple[str, Dict[str, float]]


@dataclass(frozen=True)
class DegradationSpec:
    strength: int
    scale: int
    seed: int
    chain: Tuple[Step, ...]


def sample_strength(rng: np.random.Generator,
                    probabilities: Tuple[float, float, float] = (0.5, 0.3, 0.2)
                    ) -> int:
    """Pick a bucket by `probabilities`, then a strength uniformly in it."""
    low, high = STRENGTH_BUCKETS[int(rng.choice(len(STRENGTH_BUCKETS),
                                                p=probabilities))]
    return int(rng.integers(low, high + 1))


def _check_strength(strength: int) -> int:
    if not 0 <= int(strength) <= MAX_STRENGTH:
        raise DomainError('strength must lie in 0..{0}, got {1}'
                          .format(MAX_STRENGTH, strength))
    return int(strength)


def build_spec(strength: int, seed: int, cfg: DegradeConfig = None,
               scale: int = None) -> DegradationSpec:
    """The chain for `strength`; `scale` overrides the seeded draw."""
    strength = _check_strength(strength)
    cfg = cfg or DegradeConfig()
    if scale is None:
        scale = int(np.random.default_rng(seed).integers(cfg.min_scale,
                                                         cfg.max_scale + 1))
    if strength == 0:
        return DegradationSpec(0, scale, seed, ())
    s = float(strength)
    chain = (
        ('gaussian_blur', {'sigma': 0.1 + 0.2 * s}),
        ('downsample', {'factor': 1.0 + (scale - 1) * s / MAX_STRENGTH}),
        ('upsample', {}),
        ('gaussian_noise', {'sigma': 0.005 * s}),
        ('value_quantize', {'levels': float(2 ** (8 - strength // 4))}),
    )
    return DegradationSpec(strength, scale, seed, chain)


def apply_chain(image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Run `spec` on a ``(C, H, W)`` image in [0, 1]."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3:
        raise ShapeError('expected a (C, H, W) image, got {0}'.format(image.shape))
    if not spec.chain:
        return image.copy()
    rng = np.random.default_rng([spec.seed, 1])
    _, height, width = image.shape
    planes = [channel.copy() for channel in image]
    for op, params in spec.chain:
        if op == 'gaussian_blur':
            planes = [cv2.GaussianBlur(p, (0, 0), params['sigma'],
                                       borderType=cv2.BORDER_REFLECT)
                      for p in planes]
        elif op == 'downsample':
            size = (max(1, int(round(width / params['factor']))),
                    max(1, int(round(height / params['factor']))))
            planes = [cv2.resize(p, size, interpolation=cv2.INTER_AREA)
                      for p in planes]
        elif op == 'upsample':
            planes = [cv2.resize(p, (width, height),
                                 interpolation=cv2.INTER_LINEAR)
                      for p in planes]
        elif op == 'gaussian_noise':
            planes = [p + rng.normal(0.0, params['sigma'], size=p.shape)
                      for p in planes]
        elif op == 'value_quantize':
            steps = params['levels'] - 1.0
            planes = [np.round(np.clip(p, 0.0, 1.0) * steps) / steps
                      for p in planes]
        else:
            raise DomainError('unknown degradation op {0!r}'.format(op))
    return np.clip(np.stack(planes), 0.0, 1.0)


def degrade(image: np.ndarray, strength: int, seed: int,
            cfg: DegradeConfig = None, scale: int = None) -> np.ndarray:
    """Degrade `image`; strength 0 returns an exact copy."""
    return apply_chain(image, build_spec(strength, seed, cfg, scale))


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
