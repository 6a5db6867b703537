#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/objective.py

"""Composite training objective.

``total = alpha_fm * l_fm
          + lambda_id * omega(sigma) * ((1 - lh*) * l_ref_id + lh* * l_hard)``

The identity bracket only exists when the sample has references; the
degraded-image fallback anchor is never a loss target.

>>> omega(0.5, 0.25), omega(1.0, 0.25)
(0.25, 0.0625)
"""

from typing import Sequence

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from anchorflow.config import LossConfig
from anchorflow.errors import DegenerateEmbeddingError, DomainError, InvariantError
from anchorflow.flow import NoisedState, recover
from anchorflow.identity import (
    MIN_EMBEDDING_NORM, StubIdentityEncoder, aggregate, split,
)
from anchorflow.numerics import Tensor, as_tensor, mean, power, summed
from anchorflow.tokens import decode_latent

__all__ = ['LossBreakdown', 'flow_loss', 'cosine_id_loss', 'lambda_h_star',
           'omega', 'total_loss', 'batch_loss']

BREAKDOWN_TOLERANCE = 1e-6

logger = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    l_fm: float
    l_ref_id: float
    l_hard: float
    omega: float
    lambda_h_star: float
    total: float
    has_references: bool = True
    loss: Tensor = field(default=None, repr=False, compare=False)

    def expected_total(self, cfg: LossConfig) -> float:
        bracket = ((1.0 - self.lambda_h_star) * self.l_ref_id
                   + self.lambda_h_star * self.l_hard)
        identity = (cfg.lambda_id * self.omega * bracket
                    if self.has_references else 0.0)
        return cfg.alpha_fm * self.l_fm + identity

    def check(self, cfg: LossConfig) -> 'LossBreakdown':
        """Raise :class:`InvariantError` unless the total matches its parts."""
        expected = self.expected_total(cfg)
        if not abs(self.total - expected) <= BREAKDOWN_TOLERANCE:
            raise InvariantError('loss total {0!r} differs from its composition '
                                 '{1!r}'.format(self.total, expected))
        return self

    def as_row(self) -> dict:
        return {'l_fm': self.l_fm, 'l_ref_id': self.l_ref_id,
                'l_hard': self.l_hard, 'omega': self.omega,
                'lambda_h_star': self.lambda_h_star, 'total': self.total}


def flow_loss(u_hat: Tensor, u_star: np.ndarray) -> Tensor:
    """Mean squared error over every element, uniform in sigma."""
    diff = as_tensor(u_hat) - u_star
    return mean(diff * diff)


def cosine_id_loss(decoded: Tensor, target: np.ndarray,
                   encoder: StubIdentityEncoder) -> Tensor:
    """``1 - cos(embed(decoded), target)``; no gradient reaches `target`."""
    embedding = encoder.embed(as_tensor(decoded))
    length = power(summed(embedding * embedding), 0.5)
    if not length.item() > MIN_EMBEDDING_NORM:
        raise DegenerateEmbeddingError(
            'decoded image has a degenerate identity embedding')
    return 1.0 - summed(embedding * np.asarray(target, dtype=float)) / length


def lambda_h_star(e_ref: np.ndarray, e_gt: np.ndarray, lambda_h: float) -> float:
    """Stabilizer weight, growing as the references drift from the target."""
    cosine = float(np.clip(np.dot(e_ref, e_gt), -1.0, 1.0))
    return lambda_h * (1.0 - cosine)


def omega(sigma: float, omega_min: float) -> float:
    if not 0.0 <= sigma <= 1.0:
        raise DomainError('sigma must lie in [0, 1], got {0}'.format(sigma))
    return max(1.0 - sigma, omega_min) ** 2


def total_loss(u_hat: Tensor, state: NoisedState, target: np.ndarray,
               references: Sequence[np.ndarray], encoder: StubIdentityEncoder,
               cfg: LossConfig, temperature: float = 1.0,
               latent_factor: int = 2) -> LossBreakdown:
    """Loss of one sample from its predicted flow.
    :param u_hat: Predicted flow, differentiable
    :param state: Noised latent, flow target and sigma of the sample
    :param target: Clean image the identity target is taken from
    :param references: Reference images, possibly none
    :return: Breakdown whose `loss` tensor can be back-propagated
    :rtype: LossBreakdown
    """
    l_fm = flow_loss(u_hat, state.u_star)
    weight = omega(state.sigma, cfg.omega_min)
    if not references:
        loss = l_fm * cfg.alpha_fm
        return LossBreakdown(l_fm.item(), 0.0, 0.0, weight, 0.0, loss.item(),
                             has_references=False, loss=loss).check(cfg)

    z0_hat = recover(state.z_sigma, u_hat, state.sigma)
    decoded = decode_latent(z0_hat, latent_factor)
    e_ref = aggregate([split(encoder.embed(ref)) for ref in references],
                      temperature).direction
    e_gt, _ = split(encoder.embed(target))
    l_ref = cosine_id_loss(decoded, e_ref, encoder)
    l_hard = cosine_id_loss(decoded, e_gt, encoder)
    mix = lambda_h_star(e_ref, e_gt, cfg.lambda_h)
    bracket = l_ref * (1.0 - mix) + l_hard * mix
    loss = l_fm * cfg.alpha_fm + bracket * (cfg.lambda_id * weight)
    return LossBreakdown(l_fm.item(), l_ref.item(), l_hard.item(), weight, mix,
                         loss.item(), loss=loss).check(cfg)


def batch_loss(breakdowns: Sequence[LossBreakdown]) -> Tensor:
    """Arithmetic mean of the per-sample totals."""
    if not breakdowns:
        raise DomainError('batch_loss needs at least one sample')
    total = breakdowns[0].loss
    for item in breakdowns[1:]:
        total = total + item.loss
    result = total * (1.0 / len(breakdowns))
    if not math.isfinite(result.item()):
        raise InvariantError('batch loss is not finite')
    return result


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
