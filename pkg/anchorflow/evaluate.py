#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/evaluate.py

"""Restoration metrics over a benchmark corpus.

>>> psnr(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
100.0
>>> round(psnr(np.zeros((1, 2, 2)), np.full((1, 2, 2), 0.1)), 6)
20.0
"""

from typing import Dict, List, Optional, Sequence

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from anchorflow.backbone import RestorationModel
from anchorflow.config import SamplerConfig
from anchorflow.data import Corpus
from anchorflow.decorators import CallRecorder
from anchorflow.errors import DegenerateEmbeddingError, DomainError, InvariantError
from anchorflow.flow import Conditioning, integrate
from anchorflow.identity import StubIdentityEncoder, split
from anchorflow.tokens import decode_latent

__all__ = ['WITH_REF', 'NO_REF', 'MODES', 'PSNR_CAP', 'psnr',
           'identity_cosine', 'restore', 'EvalRow', 'EvalReport', 'evaluate',
           'GapReport', 'reference_gap']

WITH_REF = 'with-ref'
NO_REF = 'no-ref'
MODES = (WITH_REF, NO_REF)
PSNR_CAP = 100.0
GAP_THRESHOLDS = (0.5, 0.6, 0.7)

logger = logging.getLogger(__name__)


def psnr(reference: np.ndarray, image: np.ndarray, peak: float = 1.0,
         cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB, capped for identical images."""
    mse = float(np.mean((np.asarray(reference, float)
                         - np.asarray(image, float)) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / mse))


def identity_cosine(encoder: StubIdentityEncoder, image: np.ndarray,
                    other: np.ndarray) -> float:
    """Cosine of the stub embeddings of two images, clipped to [-1, 1]."""
    a, _ = split(encoder.embed(image))
    b, _ = split(encoder.embed(other))
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def restore(model: RestorationModel, degraded: np.ndarray,
            references: Sequence[np.ndarray] = (),
            sampler: SamplerConfig = None) -> np.ndarray:
    """Restored image in [0, 1], same shape as `degraded`."""
    latent = integrate(model, Conditioning(degraded, tuple(references)), sampler)
    return np.clip(decode_latent(latent, model.cfg.latent_factor), 0.0, 1.0)


@dataclass(frozen=True)
class EvalRow:
    index: int
    n_refs: int
    ref_cosine: Optional[float]
    gt_cosine: float
    psnr: float
    provenance: str
    weights: Sequence[float]

    def as_row(self) -> Dict[str, object]:
        return {
            'index': self.index, 'n_refs': self.n_refs,
            'ref_cosine': '' if self.ref_cosine is None
            else '{0:.6f}'.format(self.ref_cosine),
            'gt_cosine': '{0:.6f}'.format(self.gt_cosine),
            'psnr': '{0:.4f}'.format(self.psnr),
            'provenance': self.provenance,
            'weights': ' '.join('{0:.6f}'.format(w) for w in self.weights),
        }


@dataclass
class EvalReport:
    mode: str
    ref_cosine: float
    gt_cosine: float
    psnr: float
    rows: List[EvalRow] = field(default_factory=list)
    skipped: int = 0
    config: Dict[str, object] = field(default_factory=dict)
    degenerate: int = 0

    def _counts(self) -> str:
        counts = 'skipped={0}'.format(self.skipped)
        if self.degenerate:
            counts += ' degenerate={0}'.format(self.degenerate)
        return counts

    def write_csv(self, path: str) -> None:
        """Per-sample rows, then the means with index ``mean``."""
        fields = ('index', 'n_refs', 'ref_cosine', 'gt_cosine', 'psnr',
                  'provenance', 'weights')
        with open(path, 'w', newline='') as handle:
            writer = csv.DictWriter(handle, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row.as_row())
            writer.writerow({
                'index': 'mean', 'n_refs': '',
                'ref_cosine': '{0:.6f}'.format(self.ref_cosine),
                'gt_cosine': '{0:.6f}'.format(self.gt_cosine),
                'psnr': '{0:.4f}'.format(self.psnr),
                'provenance': self.mode,
                'weights': self._counts(),
            })


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float('nan')


def evaluate(model: RestorationModel, corpus: Corpus, mode: str = WITH_REF,
             sampler: SamplerConfig = None, progress: bool = False
             ) -> EvalReport:
    """Restore every degraded sample and score it.
    Sample ``i`` is integrated with noise seed ``sampler.seed + i``. In
    with-ref mode samples without references are skipped; in no-ref mode
    the conditioning never reads a reference, which is checked. A
    restoration whose identity embedding is degenerate, such as a fully
    saturated image, is left out and counted in `degenerate`.
    """
    if mode not in MODES:
        raise DomainError('mode must be one of {0}, got {1!r}'
                          .format(MODES, mode))
    sampler = (sampler or SamplerConfig()).validate()
    conditioning_refs = CallRecorder(corpus.references)
    rows, skipped, degenerate = [], 0, 0
    for index in tqdm(range(len(corpus)), desc=mode, disable=not progress):
        if mode == WITH_REF:
            if corpus.reference_count(index) == 0:
                skipped += 1
                continue
            references = conditioning_refs(index)
        else:
            references = ()
        degraded = corpus.degraded(index)
        seeded = SamplerConfig(sampler.steps, sampler.guidance_scale,
                               sampler.seed + index)
        restored = restore(model, degraded, references, seeded)
        anchor = model.anchor(degraded, references)
        first = corpus.first_reference(index)
        try:
            ref_cosine = (None if first is None
                          else identity_cosine(model.encoder, restored, first))
            gt_cosine = identity_cosine(model.encoder, restored,
                                        corpus.target(index))
        except DegenerateEmbeddingError as error:
            logger.warning('%s: sample %d left out: %s', mode, index, error)
            degenerate += 1
            continue
        rows.append(EvalRow(
            index, len(references), ref_cosine, gt_cosine,
            psnr(corpus.target(index), restored),
            anchor.provenance, anchor.weights))
    if mode == NO_REF and conditioning_refs.call_count:
        raise InvariantError('no-ref evaluation read references {0} times'
                             .format(conditioning_refs.call_count))
    if skipped:
        logger.warning('%s: skipped %d samples without references', mode,
                       skipped)
    report = EvalReport(
        mode,
        _mean([r.ref_cosine for r in rows if r.ref_cosine is not None]),
        _mean([r.gt_cosine for r in rows]),
        _mean([r.psnr for r in rows]),
        rows, skipped,
        {'steps': sampler.steps, 'guidance': sampler.guidance_scale,
         'seed': sampler.seed, 'variant': model.cfg.variant},
        degenerate)
    logger.info('%s: ref_cosine %.4f gt_cosine %.4f psnr %.2f over %d samples',
                mode, report.ref_cosine, report.gt_cosine, report.psnr,
                len(rows))
    return report


@dataclass(frozen=True)
class GapReport:
    """Agreement between the first reference and the clean target."""
    mean: float
    std: float
    below: Dict[float, float]
    count: int

    def write_csv(self, path: str) -> None:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['statistic', 'value'])
            writer.writerow(['count', self.count])
            writer.writerow(['mean', '{0:.6f}'.format(self.mean)])
            writer.writerow(['std', '{0:.6f}'.format(self.std)])
            for threshold, fraction in sorted(self.below.items()):
                writer.writerow(['below_{0}'.format(threshold),
                                 '{0:.6f}'.format(fraction)])


def reference_gap(corpus: Corpus, encoder: StubIdentityEncoder,
                  thresholds: Sequence[float] = GAP_THRESHOLDS) -> GapReport:
    """Cosine between each identity's first reference and its target."""
    cosines = [identity_cosine(encoder, corpus.first_reference(i),
                               corpus.target(i))
               for i in range(len(corpus)) if corpus.reference_count(i)]
    if not cosines:
        raise DomainError('no identity in the corpus has a reference')
    values = np.array(cosines)
    return GapReport(float(values.mean()), float(values.std()),
                     {t: float(np.mean(values < t)) for t in thresholds},
                     len(cosines))


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
