#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/identity.py

"""Global identity pathway.

A frozen stub encoder maps an image to a raw embedding whose direction
carries identity and whose norm acts as a quality proxy. References are
aggregated into one unit anchor with norm-only weights; without
references the degraded image's own direction is used. The anchor drives
per-block modulation deltas that only ever reach image tokens.

>>> e, q = split(np.array([3.0, 4.0, 0.0]))
>>> e.tolist(), q
([0.6, 0.8, 0.0], 5.0)
"""

from typing import List, Sequence, Tuple, Union

import logging
from dataclasses import dataclass

import numpy as np

from anchorflow.config import BackboneConfig
from anchorflow.errors import (
    DegenerateAnchorError, DegenerateEmbeddingError, DomainError, ShapeError,
)
from anchorflow.layers import Linear, Mlp
from anchorflow.numerics import (
    ParameterRegistry, Tensor, matmul, reshape, softmax,
)

__all__ = [
    'REFERENCE_AGGREGATE', 'DEGRADED_FALLBACK', 'MIN_EMBEDDING_NORM',
    'MIN_ANCHOR_NORM', 'StubIdentityEncoder', 'IdentityAnchor', 'split',
    'aggregate', 'canonical_order', 'select_anchor', 'ModulationDeltas',
    'IdentityPathway',
]

REFERENCE_AGGREGATE = 'reference-aggregate'
DEGRADED_FALLBACK = 'degraded-fallback'
MIN_EMBEDDING_NORM = 1e-8
MIN_ANCHOR_NORM = 1e-6

logger = logging.getLogger(__name__)


class StubIdentityEncoder:
    """Frozen linear identity encoder.

    ``embed(x) = vec(x) @ M`` where ``M`` removes the image mean, averages
    pixels down to a ``grid x grid`` raster and projects it with a fixed
    random matrix. Being linear, the embedding norm scales with contrast;
    a constant image embeds to zero.
    """

    def __init__(self, image_shape: Tuple[int, int, int], id_dim: int,
                 grid: int = 8, seed: int = 1234) -> None:
        channels, height, width = image_shape
        if height % grid or width % grid:
            raise ShapeError('image {0}x{1} cannot be pooled to a {2}x{2} grid'
                             .format(height, width, grid))
        self.image_shape = tuple(image_shape)
        self.id_dim, self.grid, self.seed = id_dim, grid, seed
        n_pixels = channels * height * width
        centring = np.eye(n_pixels) - 1.0 / n_pixels
        fy, fx = height // grid, width // grid
        pooling = np.zeros((channels, height, width, channels, grid, grid))
        for c in range(channels):
            for y in range(height):
                for x in range(width):
                    pooling[c, y, x, c, y // fy, x // fx] = 1.0 / (fy * fx)
        pooling = pooling.reshape(n_pixels, channels * grid * grid)
        rng = np.random.default_rng(seed)
        projection = rng.standard_normal((channels * grid * grid, id_dim))
        projection /= np.sqrt(id_dim)
        self.matrix = centring @ pooling @ projection
        self.matrix.setflags(write=False)

    def __repr__(self) -> str:
        return '<StubIdentityEncoder {0} -> {1} seed={2}>'.format(
            self.image_shape, self.id_dim, self.seed)

    def embed(self, image: Union[np.ndarray, Tensor]) -> Union[np.ndarray, Tensor]:
        """Raw embedding of one image; a Tensor input stays differentiable."""
        if tuple(image.shape) != self.image_shape:
            raise ShapeError('encoder expects images of shape {0}, got {1}'
                             .format(self.image_shape, tuple(image.shape)))
        if isinstance(image, Tensor):
            flat = reshape(image, (1, -1))
            return reshape(matmul(flat, self.matrix), (self.id_dim,))
        return np.asarray(image, dtype=float).reshape(-1) @ self.matrix

    def direction(self, image: np.ndarray) -> np.ndarray:
        return split(self.embed(image))[0]


@dataclass(frozen=True)
class IdentityAnchor:
    direction: np.ndarray
    weights: Tuple[float, ...]
    provenance: str

    @property
    def from_references(self) -> bool:
        return self.provenance == REFERENCE_AGGREGATE


def split(z: np.ndarray) -> Tuple[np.ndarray, float]:
    """Direction and norm of a raw embedding."""
    z = np.asarray(z, dtype=float)
    q = float(np.linalg.norm(z))
    if not q > MIN_EMBEDDING_NORM:
        raise DegenerateEmbeddingError(
            'identity embedding norm {0:.3g} is too small to define a '
            'direction'.format(q))
    return z / q, q


def _canonical_permutation(embeddings: Sequence[Tuple[np.ndarray, float]]
                           ) -> List[int]:
    """Indices by descending norm, ties by the direction's bytes."""
    return sorted(range(len(embeddings)),
                  key=lambda i: (-embeddings[i][1],
                                 np.asarray(embeddings[i][0]).tobytes()))


def aggregate(embeddings: Sequence[Tuple[np.ndarray, float]],
              temperature: float = 1.0) -> IdentityAnchor:
    """Norm-only aggregation ``w = softmax(log q / T)``.
    Weights are returned in input order; the weighted sum runs in
    canonical order, so any permutation of the input gives the same
    direction bit for bit.
    """
    if not embeddings:
        raise DomainError('aggregate needs at least one reference embedding')
    if temperature <= 0:
        raise DomainError('temperature must be positive, got {0}'
                          .format(temperature))
    order = _canonical_permutation(embeddings)
    q_sorted = np.array([embeddings[i][1] for i in order], dtype=float)
    w_sorted = softmax(np.log(q_sorted) / temperature).data
    total = np.zeros_like(np.asarray(embeddings[0][0], dtype=float))
    for slot, i in enumerate(order):
        total = total + w_sorted[slot] * np.asarray(embeddings[i][0], dtype=float)
    length = float(np.linalg.norm(total))
    if length < MIN_ANCHOR_NORM:
        raise DegenerateAnchorError(
            'reference directions cancel out (|sum w e| = {0:.3g})'
            .format(length))
    weights = np.empty(len(order))
    weights[order] = w_sorted
    return IdentityAnchor(total / length, tuple(float(w) for w in weights),
                          REFERENCE_AGGREGATE)


def canonical_order(references: Sequence[np.ndarray],
                    encoder: StubIdentityEncoder) -> List[np.ndarray]:
    """References sorted the way :func:`aggregate` sums them."""
    embeddings = [split(encoder.embed(ref)) for ref in references]
    return [references[i] for i in _canonical_permutation(embeddings)]


def select_anchor(references: Sequence[np.ndarray], degraded: np.ndarray,
                  encoder: StubIdentityEncoder,
                  temperature: float = 1.0) -> IdentityAnchor:
    """Aggregate the references, or fall back to the degraded image."""
    if references:
        return aggregate([split(encoder.embed(ref)) for ref in references],
                         temperature)
    direction, _ = split(encoder.embed(degraded))
    return IdentityAnchor(direction, (), DEGRADED_FALLBACK)


@dataclass(frozen=True)
class ModulationDeltas:
    """One ``(6, d_model)`` delta per block, rows ordered
    shift, scale and gate of the attention sub-layer, then of the MLP."""
    double: Tuple[Tensor, ...]
    single: Tuple[Tensor, ...]

    def blocks(self) -> Tuple[Tensor, ...]:
        return self.double + self.single

    def is_zero(self) -> bool:
        return all(not np.any(delta.data) for delta in self.blocks())


class IdentityPathway:
    """``h_id = phi(direction)``; block deltas ``psi_l(h_id)``.
    The heads start at zero so fresh deltas are exactly zero. phi is
    fan-in initialised so h_id, and with it the heads' gradient, is of
    order 0.1 for a unit anchor.
    """

    def __init__(self, registry: ParameterRegistry, cfg: BackboneConfig,
                 rng: np.random.Generator) -> None:
        d = cfg.d_model
        self.phi = Mlp(registry, 'identity.phi', cfg.id_dim, d, d, rng,
                       fan_in=True)
        self.double_heads = [
            Linear(registry, 'identity.psi_double.{0}'.format(i), d, 6 * d,
                   rng, zero=True)
            for i in range(cfg.n_double_blocks)]
        self.single_heads = [
            Linear(registry, 'identity.psi_single.{0}'.format(i), d, 6 * d,
                   rng, zero=True)
            for i in range(cfg.n_single_blocks)]
        self.d_model = d

    def deltas(self, anchor: IdentityAnchor) -> ModulationDeltas:
        hidden = self.phi(anchor.direction[None, :])

        def head(linear: Linear) -> Tensor:
            return reshape(linear(hidden), (6, self.d_model))

        return ModulationDeltas(tuple(head(h) for h in self.double_heads),
                                tuple(head(h) for h in self.single_heads))


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
