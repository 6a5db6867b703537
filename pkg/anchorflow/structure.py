#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/structure.py

"""Degraded-image reinforcement.

The degraded latent enters the model three ways: as its own token
segment, as a low-rank residual on the scene tokens, and as a small
pooled memory read by gated cross-attention in every block. The
residual up-projection and every gate start at zero.
"""

from typing import List, Tuple

from dataclasses import dataclass

import cv2
import numpy as np

from anchorflow.config import BackboneConfig
from anchorflow.errors import ShapeError
from anchorflow.layers import Linear, LowRank, normal_init, sinusoidal_embedding
from anchorflow.numerics import (
    ArrayLike, ParameterRegistry, Tensor, as_tensor, attention, concat,
)
from anchorflow.tokens import patchify

__all__ = [
    'resize_to_scene', 'smooth', 'grid_code', 'DegradedMemory',
    'LearnedQueryPooler', 'DegradedCrossAttention', 'StructurePathway',
]


def resize_to_scene(latent: np.ndarray, target_hw: Tuple[int, int]
                    ) -> np.ndarray:
    """Bilinear resize of every channel; a copy when sizes already match."""
    latent = np.asarray(latent, dtype=float)
    height, width = target_hw
    if height < 1 or width < 1:
        raise ShapeError('resize target must be positive, got {0}'
                         .format(target_hw))
    if latent.shape[1:] == (height, width):
        return latent.copy()
    return np.stack([cv2.resize(channel, (width, height),
                                interpolation=cv2.INTER_LINEAR)
                     for channel in latent])


def smooth(latent: np.ndarray) -> np.ndarray:
    """3x3 box average per channel with replicate padding.
    Computed as ``x + mean(neighbour - x)`` so constant inputs come back
    bit-exactly.
    """
    latent = np.asarray(latent, dtype=float)
    _, height, width = latent.shape
    padded = np.pad(latent, ((0, 0), (1, 1), (1, 1)), mode='edge')
    offsets = np.zeros_like(latent)
    for dy in range(3):
        for dx in range(3):
            offsets += padded[:, dy:dy + height, dx:dx + width] - latent
    return latent + offsets / 9.0


def grid_code(grid: Tuple[int, int], dim: int) -> np.ndarray:
    """Fixed sinusoidal code of each row-major ``(h, w)`` cell."""
    half = dim // 2
    gh, gw = grid
    return np.stack([np.concatenate([sinusoidal_embedding(h, half),
                                     sinusoidal_embedding(w, dim - half)])
                     for h in range(gh) for w in range(gw)])


@dataclass(frozen=True)
class DegradedMemory:
    memory: Tensor
    route_boundary: int

    @property
    def base(self) -> Tensor:
        return self.memory[:self.route_boundary]

    @property
    def detail(self) -> Tensor:
        return self.memory[self.route_boundary:]

    def __len__(self) -> int:
        return self.memory.shape[0]


class LearnedQueryPooler:
    """Single-head cross-attention from learned queries to patch tokens.
    The position code is added to the keys only.
    """

    def __init__(self, registry: ParameterRegistry, name: str, n_queries: int,
                 d_in: int, d_model: int, rng: np.random.Generator) -> None:
        self.queries = registry.create(name + '.queries',
                                       normal_init(rng, (n_queries, d_model), 1.0))
        self.key = Linear(registry, name + '.key', d_in, d_model, rng)
        self.value = Linear(registry, name + '.value', d_in, d_model, rng)

    def __call__(self, tokens: ArrayLike, code: np.ndarray) -> Tensor:
        keys = self.key(tokens) + code
        return attention(self.queries, keys, self.value(tokens))


class DegradedCrossAttention:
    """``h + gamma * Attn(h Wq, M A_k B_k, M A_v B_v)`` over heads."""

    def __init__(self, registry: ParameterRegistry, name: str,
                 cfg: BackboneConfig, rng: np.random.Generator) -> None:
        d = cfg.d_model
        self.n_heads, self.head_dim = cfg.n_heads, cfg.head_dim
        self.query = Linear(registry, name + '.query', d, d, rng, bias=False)
        self.key = LowRank(registry, name + '.key', d, cfg.rank, d, rng)
        self.value = LowRank(registry, name + '.value', d, cfg.rank, d, rng)
        self.gate = registry.create(name + '.gate', np.zeros(1))

    def _heads(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.n_heads, self.head_dim).transpose(1, 0, 2)

    def read(self, hidden: ArrayLike, memory: DegradedMemory) -> Tensor:
        """The ungated attention read, ``(n, d_model)``."""
        hidden = as_tensor(hidden)
        n = hidden.shape[0]
        out = attention(self._heads(self.query(hidden)),
                        self._heads(self.key(memory.memory)),
                        self._heads(self.value(memory.memory)))
        return out.transpose(1, 0, 2).reshape(n, self.n_heads * self.head_dim)

    def __call__(self, hidden: ArrayLike, memory: DegradedMemory) -> Tensor:
        hidden = as_tensor(hidden)
        if hidden.ndim != 2 or hidden.shape[1] != self.n_heads * self.head_dim:
            raise ShapeError('cross-attention expects (n, {0}) tokens, got {1}'
                             .format(self.n_heads * self.head_dim,
                                     hidden.shape))
        return hidden + self.gate * self.read(hidden, memory)


class StructurePathway:

    def __init__(self, registry: ParameterRegistry, cfg: BackboneConfig,
                 rng: np.random.Generator) -> None:
        self.cfg = cfg
        d = cfg.d_model
        self.residual = LowRank(registry, 'structure.residual', cfg.patch_dim,
                                cfg.rank, d, rng, zero_up=True)
        self.base = LearnedQueryPooler(
            registry, 'structure.pool_base', cfg.memory_split, cfg.patch_dim,
            d, rng)
        self.detail = LearnedQueryPooler(
            registry, 'structure.pool_detail',
            cfg.memory_budget - cfg.memory_split, cfg.patch_dim, d, rng)
        blocks = cfg.n_double_blocks + cfg.n_single_blocks
        self.cross: List[DegradedCrossAttention] = [
            DegradedCrossAttention(registry, 'structure.cross.{0}'.format(i),
                                   cfg, rng)
            for i in range(blocks)]

    def input_residual(self, scene: ArrayLike, degraded_tokens: np.ndarray,
                       strength: float = None) -> Tensor:
        """``scene + s_deg * degraded_tokens @ A @ B``."""
        scene = as_tensor(scene)
        if scene.shape[0] != degraded_tokens.shape[0]:
            raise ShapeError('{0} scene tokens but {1} degraded tokens'
                             .format(scene.shape[0], degraded_tokens.shape[0]))
        strength = self.cfg.s_deg if strength is None else strength
        return scene + self.residual(degraded_tokens) * strength

    def build_memory(self, degraded_latent: np.ndarray,
                     routes: int = 2) -> DegradedMemory:
        """Pool the degraded latent into the fixed-size two-route memory.
        With ``routes=1`` only the base route is built.
        """
        tokens, grid = patchify(degraded_latent, self.cfg.patch)
        code = grid_code(grid, self.cfg.d_model)
        base = self.base(tokens, code)
        if routes == 1:
            return DegradedMemory(base, base.shape[0])
        detail_tokens, _ = patchify(degraded_latent - smooth(degraded_latent),
                                    self.cfg.patch)
        detail = self.detail(detail_tokens, code)
        return DegradedMemory(concat([base, detail], axis=0), base.shape[0])


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
