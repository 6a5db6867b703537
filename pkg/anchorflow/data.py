#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/data.py

"""Synthetic identities, corpora and training samples.

An identity is a handful of Gaussian intensity blobs on a grey face;
renders of one identity differ only by a nuisance transform (shift,
brightness, small rotation). Corpora are stored as PNG files next to a
``manifest.csv``.
"""

from typing import Iterator, List, Optional, Sequence, Tuple

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from anchorflow.config import DegradeConfig
from anchorflow.degrade import degrade, sample_strength
from anchorflow.errors import ConfigError, DomainError, ImageReadError
from anchorflow.flow import MAX_REFERENCES, sample_sigma
from anchorflow.imageio import read_image, write_image

__all__ = [
    'BASE_INTENSITY', 'SyntheticIdentity', 'Nuisance', 'render',
    'sample_reference_count', 'CorpusItem', 'Corpus', 'make_dataset',
    'make_benchmark', 'TrainingSample', 'draw_sample',
]

BASE_INTENSITY = 0.5
MANIFEST = 'manifest.csv'
_FIELDS = ('index', 'identity_seed', 'n_refs', 'strength', 'degrade_seed')

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticIdentity:
    seed: int
    centers: np.ndarray     # (n, 2) as (y, x) pixels
    widths: np.ndarray
    amplitudes: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, size: int = 16) -> 'SyntheticIdentity':
        rng = np.random.default_rng(seed)
        count = int(rng.integers(4, 7))
        centers = rng.uniform(0.2 * size, 0.8 * size, size=(count, 2))
        widths = rng.uniform(0.09, 0.19, size=count) * size
        amplitudes = (rng.uniform(0.15, 0.35, size=count)
                      * rng.choice([-1.0, 1.0], size=count))
        return cls(seed, centers, widths, amplitudes)


@dataclass(frozen=True)
class Nuisance:
    shift: Tuple[float, float] = (0.0, 0.0)
    brightness: float = 0.0
    rotation: float = 0.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> 'Nuisance':
        shift = tuple(float(v) for v in rng.uniform(-1.0, 1.0, size=2))
        return cls(shift, float(rng.uniform(-0.05, 0.05)),
                   float(rng.uniform(-0.1, 0.1)))


def render(identity: SyntheticIdentity, nuisance: Nuisance = Nuisance(),
           size: int = 16) -> np.ndarray:
    """``(1, size, size)`` image in [0, 1]."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    middle = (size - 1) / 2.0
    dy = ys - middle - nuisance.shift[0]
    dx = xs - middle - nuisance.shift[1]
    cos, sin = np.cos(nuisance.rotation), np.sin(nuisance.rotation)
    # sample the identity in its own frame
    py = cos * dy - sin * dx + middle
    px = sin * dy + cos * dx + middle
    image = np.full((size, size), BASE_INTENSITY + nuisance.brightness)
    for (cy, cx), width, amplitude in zip(identity.centers, identity.widths,
                                          identity.amplitudes):
        distance = (py - cy) ** 2 + (px - cx) ** 2
        image += amplitude * np.exp(-distance / (2.0 * width * width))
    return np.clip(image, 0.0, 1.0)[None, :, :]


def sample_reference_count(rng: np.random.Generator,
                           mix: Sequence[float] = (0.3, 0.3, 0.2, 0.2)) -> int:
    """Number of references, 0..3, drawn from `mix`."""
    if len(mix) != MAX_REFERENCES + 1:
        raise ConfigError('reference mix needs {0} probabilities'
                          .format(MAX_REFERENCES + 1))
    return int(rng.choice(MAX_REFERENCES + 1, p=list(mix)))


@dataclass(frozen=True)
class CorpusItem:
    index: int
    identity_seed: int
    target: np.ndarray
    references: Tuple[np.ndarray, ...]
    degraded: Optional[np.ndarray] = None
    strength: Optional[int] = None
    degrade_seed: Optional[int] = None


class Corpus:
    """Indexed identities. Conditioning code reads references through
    :meth:`references`; metrics read :meth:`first_reference`."""

    def __init__(self, items: Sequence[CorpusItem]) -> None:
        self.items: List[CorpusItem] = list(items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[CorpusItem]:
        return iter(self.items)

    def __getitem__(self, index: int) -> CorpusItem:
        return self.items[index]

    def target(self, index: int) -> np.ndarray:
        return self.items[index].target

    def degraded(self, index: int) -> np.ndarray:
        item = self.items[index]
        if item.degraded is None:
            raise DomainError('corpus item {0} has no degraded image'
                              .format(index))
        return item.degraded

    def reference_count(self, index: int) -> int:
        return len(self.items[index].references)

    def references(self, index: int) -> Tuple[np.ndarray, ...]:
        return self.items[index].references

    def first_reference(self, index: int) -> Optional[np.ndarray]:
        references = self.items[index].references
        return references[0] if references else None

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, MANIFEST), 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(_FIELDS)
            for item in self.items:
                stem = '{0:05d}'.format(item.index)
                write_image(os.path.join(directory, 'target_' + stem + '.png'),
                            item.target)
                for r, ref in enumerate(item.references):
                    write_image(os.path.join(
                        directory, 'ref_{0}_{1}.png'.format(stem, r)), ref)
                if item.degraded is not None:
                    write_image(os.path.join(directory, 'deg_' + stem + '.png'),
                                item.degraded)
                writer.writerow([item.index, item.identity_seed,
                                 len(item.references),
                                 '' if item.strength is None else item.strength,
                                 '' if item.degrade_seed is None
                                 else item.degrade_seed])
        logger.info('wrote %d identities to %s', len(self.items), directory)

    @classmethod
    def load(cls, directory: str) -> 'Corpus':
        path = os.path.join(directory, MANIFEST)
        try:
            with open(path, newline='') as handle:
                rows = list(csv.DictReader(handle))
        except OSError as error:
            raise ImageReadError('cannot read corpus manifest {0}: {1}'
                                 .format(path, error)) from error
        items = []
        for row in rows:
            stem = '{0:05d}'.format(int(row['index']))
            refs = tuple(read_image(os.path.join(
                directory, 'ref_{0}_{1}.png'.format(stem, r)))
                for r in range(int(row['n_refs'])))
            degraded = None
            if row['strength'] != '':
                degraded = read_image(os.path.join(directory,
                                                   'deg_' + stem + '.png'))
            items.append(CorpusItem(
                int(row['index']), int(row['identity_seed']),
                read_image(os.path.join(directory, 'target_' + stem + '.png')),
                refs, degraded,
                int(row['strength']) if row['strength'] != '' else None,
                int(row['degrade_seed']) if row['degrade_seed'] != '' else None))
        return cls(items)


def _identity_streams(n: int, seed: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def make_dataset(n_identities: int, refs_per_identity: int, seed: int,
                 size: int = 16, progress: bool = False) -> Corpus:
    """Deterministic corpus of clean targets with their references."""
    if n_identities < 1:
        raise DomainError('need at least one identity')
    if refs_per_identity < 0:
        raise DomainError('refs_per_identity must be non-negative')
    items = []
    streams = _identity_streams(n_identities, seed)
    for index, stream in enumerate(tqdm(streams, desc='identities',
                                        disable=not progress)):
        identity_seed = int(stream.generate_state(1, dtype=np.uint64)[0])
        identity = SyntheticIdentity.from_seed(identity_seed, size)
        rng = np.random.default_rng(stream)
        target = render(identity, Nuisance.sample(rng), size)
        refs = tuple(render(identity, Nuisance.sample(rng), size)
                     for _ in range(refs_per_identity))
        items.append(CorpusItem(index, identity_seed, target, refs))
    return Corpus(items)


def make_benchmark(n_identities: int, refs_per_identity: int, seed: int,
                   strength: int = None, base_seed: int = 42,
                   degrade_cfg: DegradeConfig = None, size: int = 16,
                   progress: bool = False) -> Corpus:
    """Held-out corpus whose targets are degraded with seed
    ``base_seed + i`` for identity index ``i``. Without `strength` every
    identity draws one from the strength buckets."""
    degrade_cfg = (degrade_cfg or DegradeConfig()).validate()
    clean = make_dataset(n_identities, refs_per_identity, seed, size, progress)
    items = []
    for item in clean:
        degrade_seed = base_seed + item.index
        level = strength
        if level is None:
            level = sample_strength(np.random.default_rng([seed, item.index]),
                                    degrade_cfg.strength_buckets)
        degraded = degrade(item.target, level, degrade_seed, degrade_cfg)
        items.append(CorpusItem(item.index, item.identity_seed, item.target,
                                item.references, degraded, level, degrade_seed))
    return Corpus(items)


@dataclass(frozen=True)
class TrainingSample:
    index: int
    target: np.ndarray
    degraded: np.ndarray
    references: Tuple[np.ndarray, ...]
    sigma: float
    strength: int
    degrade_seed: int
    eps: np.ndarray


def draw_sample(corpus: Corpus, index: int, rng: np.random.Generator,
                latent_shape: Tuple[int, int, int],
                ref_mix: Sequence[float] = (0.3, 0.3, 0.2, 0.2),
                degrade_cfg: DegradeConfig = None) -> TrainingSample:
    """One online training sample for identity `index`.
    References are distinct renders; fewer are used when fewer exist.
    """
    degrade_cfg = degrade_cfg or DegradeConfig()
    available = corpus.references(index)
    count = min(sample_reference_count(rng, ref_mix), len(available))
    chosen = rng.choice(len(available), size=count, replace=False) if count else []
    references = tuple(available[int(i)] for i in chosen)
    strength = sample_strength(rng, degrade_cfg.strength_buckets)
    degrade_seed = int(rng.integers(2 ** 31))
    target = corpus.target(index)
    degraded = degrade(target, strength, degrade_seed, degrade_cfg)
    sigma = sample_sigma(rng)
    eps = rng.standard_normal(latent_shape)
    return TrainingSample(index, target, degraded, references, sigma, strength,
                          degrade_seed, eps)
