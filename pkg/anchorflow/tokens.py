#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/tokens.py

"""Latent codec, patch tokens, four-axis positions and sequence assembly.

The hybrid sequence is ``[text, scene, degraded, ref0, ref1, ...]``.
Every token carries a position id ``(t, h, w, l)``; the temporal axis
separates the groups:

>>> position_ids('degraded', (1, 3))
[PositionId(t=2, h=0, w=0, l=0), PositionId(t=2, h=0, w=1, l=0), PositionId(t=2, h=0, w=2, l=0)]
>>> position_ids('reference', (1, 1), ref_index=1)
[PositionId(t=11, h=0, w=0, l=0)]
>>> position_ids('text', (1, 2))
[PositionId(t=0, h=0, w=0, l=0), PositionId(t=0, h=0, w=0, l=1)]
"""

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from dataclasses import dataclass, field

import numpy as np

from anchorflow.config import RopeConfig
from anchorflow.errors import DomainError, ReferenceCountError, ShapeError
from anchorflow.flow import MAX_REFERENCES
from anchorflow.numerics import Tensor, as_tensor, concat, matmul

__all__ = [
    'SCENE_T', 'DEGRADED_T', 'REFERENCE_T0', 'TEXT', 'SCENE', 'DEGRADED',
    'PositionId', 'reference_label', 'encode_latent', 'decode_latent',
    'patchify', 'unpatchify', 'position_ids', 'rope_angles', 'rope_tables',
    'rope_rotate', 'apply_rope', 'TokenBlock', 'TokenSequence',
    'assemble_sequence',
]

SCENE_T = 0
DEGRADED_T = 2
REFERENCE_T0 = 10

TEXT = 'text'
SCENE = 'scene'
DEGRADED = 'degraded'
_REFERENCE = 'reference'

Grid = Union[np.ndarray, Tensor]


class PositionId(NamedTuple):
    t: int
    h: int
    w: int
    l: int


def reference_label(index: int) -> str:
    return 'ref{0}'.format(index)


# latent codec: affine [0, 1] -> [-1, 1] followed by space-to-depth

def encode_latent(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """``(C, H, W)`` image in [0, 1] to a ``(C f^2, H/f, W/f)`` latent."""
    image = np.asarray(image, dtype=float)
    channels, height, width = image.shape
    if height % factor or width % factor:
        raise ShapeError('image {0}x{1} is not divisible by the latent factor '
                         '{2}'.format(height, width, factor))
    x = 2.0 * image - 1.0
    x = x.reshape(channels, height // factor, factor, width // factor, factor)
    return x.transpose(0, 2, 4, 1, 3).reshape(
        channels * factor * factor, height // factor, width // factor)


def decode_latent(latent: Grid, factor: int = 2) -> Grid:
    """Exact inverse of :func:`encode_latent`; Tensors stay differentiable."""
    depth, height, width = latent.shape
    if depth % (factor * factor):
        raise ShapeError('latent depth {0} is not divisible by {1}'
                         .format(depth, factor * factor))
    channels = depth // (factor * factor)
    x = latent.reshape(channels, factor, factor, height, width)
    x = x.transpose(0, 3, 1, 4, 2).reshape(channels, height * factor,
                                           width * factor)
    return (x + 1.0) * 0.5


def patchify(latent: Grid, patch: int) -> Tuple[Grid, Tuple[int, int]]:
    """Cut a ``(C, H, W)`` grid into row-major ``p x p`` patch tokens.
    :return: ``(tokens, (grid_h, grid_w))`` with tokens ``(gh*gw, C*p*p)``
    """
    channels, height, width = latent.shape
    if patch < 1 or height % patch or width % patch:
        raise ShapeError('grid {0}x{1} is not divisible by patch {2}'
                         .format(height, width, patch))
    gh, gw = height // patch, width // patch
    x = latent.reshape(channels, gh, patch, gw, patch)
    x = x.transpose(1, 3, 0, 2, 4).reshape(gh * gw, channels * patch * patch)
    return x, (gh, gw)


def unpatchify(tokens: Grid, grid: Tuple[int, int], channels: int,
               patch: int) -> Grid:
    gh, gw = grid
    if tuple(tokens.shape) != (gh * gw, channels * patch * patch):
        raise ShapeError('tokens {0} do not fit a {1}x{2} grid of {3}-channel '
                         '{4}x{4} patches'.format(tokens.shape, gh, gw,
                                                  channels, patch))
    x = tokens.reshape(gh, gw, channels, patch, patch)
    return x.transpose(2, 0, 3, 1, 4).reshape(channels, gh * patch, gw * patch)


def position_ids(segment: str, grid: Tuple[int, int],
                 ref_index: int = None) -> List[PositionId]:
    """Row-major ids of one segment.
    Text tokens only use the ``l`` axis; `grid` then gives their count
    as ``(1, n)``.
    """
    if (segment == _REFERENCE) != (ref_index is not None):
        raise DomainError('ref_index is required for reference segments and '
                          'only for them')
    gh, gw = grid
    if segment == TEXT:
        return [PositionId(0, 0, 0, l) for l in range(gh * gw)]
    if segment == SCENE:
        t = SCENE_T
    elif segment == DEGRADED:
        t = DEGRADED_T
    elif segment == _REFERENCE:
        if not 0 <= ref_index < MAX_REFERENCES:
            raise DomainError('ref_index must lie in [0, {0}), got {1}'
                              .format(MAX_REFERENCES, ref_index))
        t = REFERENCE_T0 + ref_index
    else:
        raise DomainError('unknown segment {0!r}'.format(segment))
    return [PositionId(t, h, w, 0) for h in range(gh) for w in range(gw)]


# rotary position embedding over the four axes (t, h, w, l)

def rope_angles(ids: Sequence[PositionId], cfg: RopeConfig) -> np.ndarray:
    """Rotation angle of every adjacent pair, shape ``(n, head_dim / 2)``."""
    cfg.validate()
    positions = np.asarray(ids, dtype=float).reshape(-1, 4)
    blocks = []
    for axis, dim in enumerate(cfg.axis_dims):
        freqs = cfg.theta ** (-np.arange(0, dim, 2, dtype=float) / dim)
        blocks.append(positions[:, axis:axis + 1] * freqs[None, :])
    return np.concatenate(blocks, axis=1)


def rope_tables(ids: Sequence[PositionId], cfg: RopeConfig
                ) -> Tuple[np.ndarray, np.ndarray]:
    """``cos`` and ``sin`` per feature, each pair sharing its angle."""
    angles = np.repeat(rope_angles(ids, cfg), 2, axis=1)
    return np.cos(angles), np.sin(angles)


def _pair_swap(head_dim: int) -> np.ndarray:
    """``x @ S`` maps each pair ``(a, b)`` to ``(-b, a)``."""
    swap = np.zeros((head_dim, head_dim))
    for m in range(0, head_dim, 2):
        swap[m + 1, m] = -1.0
        swap[m, m + 1] = 1.0
    return swap


def apply_rope(x: Union[Tensor, np.ndarray], cos: np.ndarray,
               sin: np.ndarray) -> Tensor:
    """Rotate ``(..., n, head_dim)`` features by per-token tables."""
    x = as_tensor(x)
    if x.shape[-2:] != cos.shape:
        raise ShapeError('features {0} do not match rope tables {1}'
                         .format(x.shape, cos.shape))
    return x * cos + matmul(x, _pair_swap(x.shape[-1])) * sin


def rope_rotate(vec: np.ndarray, position: PositionId,
                cfg: RopeConfig) -> np.ndarray:
    """Rotate one head vector to `position`; norm preserving."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (cfg.validate().head_dim,):
        raise ShapeError('vector of shape {0} does not match head dim {1}'
                         .format(vec.shape, cfg.head_dim))
    cos, sin = rope_tables([position], cfg)
    return apply_rope(vec[None, :], cos, sin).data[0]


class TokenBlock(NamedTuple):
    """Embedded tokens of one image plus the grid they were cut from."""
    features: Tensor
    grid: Tuple[int, int]


@dataclass
class TokenSequence:
    features: Tensor
    ids: Tuple[PositionId, ...]
    segments: Tuple[str, ...]
    offsets: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def labels(self) -> List[str]:
        return list(self.offsets)

    @property
    def n_references(self) -> int:
        return sum(1 for label in self.offsets if label.startswith('ref'))

    @property
    def n_text(self) -> int:
        return self.offsets.get(TEXT, (0, 0))[1]

    def rows(self, label: str) -> slice:
        start, length = self.offsets[label]
        return slice(start, start + length)

    def segment(self, label: str) -> Tensor:
        return self.features[self.rows(label)]


def assemble_sequence(scene: TokenBlock, degraded: TokenBlock,
                      refs: Sequence[TokenBlock] = (),
                      text: Optional[Tensor] = None) -> TokenSequence:
    """Concatenate the segments in canonical order.
    An empty `refs` yields no reference segment at all.
    """
    refs = list(refs)
    if len(refs) > MAX_REFERENCES:
        raise ReferenceCountError('at most {0} references are supported, got '
                                  '{1}'.format(MAX_REFERENCES, len(refs)))
    parts: List[Tuple[str, Tensor, List[PositionId]]] = []
    if text is not None:
        text = as_tensor(text)
        parts.append((TEXT, text, position_ids(TEXT, (1, text.shape[0]))))
    parts.append((SCENE, as_tensor(scene.features),
                  position_ids(SCENE, scene.grid)))
    parts.append((DEGRADED, as_tensor(degraded.features),
                  position_ids(DEGRADED, degraded.grid)))
    for index, ref in enumerate(refs):
        parts.append((reference_label(index), as_tensor(ref.features),
                      position_ids(_REFERENCE, ref.grid, ref_index=index)))

    width = parts[0][1].shape[-1]
    offsets: Dict[str, Tuple[int, int]] = {}
    ids: List[PositionId] = []
    segments: List[str] = []
    for label, features, part_ids in parts:
        if features.ndim != 2 or features.shape[1] != width:
            raise ShapeError('segment {0!r} has features {1}, expected (n, {2})'
                             .format(label, features.shape, width))
        if features.shape[0] != len(part_ids):
            raise ShapeError('segment {0!r} has {1} rows for {2} positions'
                             .format(label, features.shape[0], len(part_ids)))
        offsets[label] = (len(ids), len(part_ids))
        ids.extend(part_ids)
        segments.extend([label] * len(part_ids))
    features = concat([features for _, features, _ in parts], axis=0)
    return TokenSequence(features, tuple(ids), tuple(segments), offsets)


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
