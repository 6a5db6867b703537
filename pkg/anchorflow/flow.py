#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/flow.py

"""Straight-line flow matching between clean latents and Gaussian noise.

``sigma = 0`` is clean data and ``sigma = 1`` pure noise:

>>> z0, eps = np.zeros(2), np.ones(2)
>>> state = noise(z0, eps, 0.25)
>>> state.z_sigma.tolist(), state.u_star.tolist()
([0.25, 0.25], [1.0, 1.0])
>>> recover(state.z_sigma, state.u_star, 0.25).tolist()
[0.0, 0.0]
"""

from typing import Protocol, Sequence, Tuple, Union

import logging
from dataclasses import dataclass

import numpy as np

from anchorflow.config import SamplerConfig
from anchorflow.errors import DomainError, ReferenceCountError, ShapeError
from anchorflow.numerics import Tensor

__all__ = [
    'MAX_REFERENCES', 'NoisedState', 'Conditioning', 'FlowModel', 'noise',
    'recover', 'sample_sigma', 'initial_noise', 'sigma_grid', 'guided_flow',
    'integrate',
]

MAX_REFERENCES = 3

logger = logging.getLogger(__name__)

Grid = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class NoisedState:
    z_sigma: np.ndarray
    u_star: np.ndarray
    sigma: float


@dataclass(frozen=True)
class Conditioning:
    """What the sampler conditions on: the degraded observation and
    zero to three reference images of the same identity."""
    degraded: np.ndarray
    references: Tuple[np.ndarray, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, 'references', tuple(self.references))
        if len(self.references) > MAX_REFERENCES:
            raise ReferenceCountError(
                'at most {0} references are supported, got {1}'
                .format(MAX_REFERENCES, len(self.references)))

    @property
    def n_references(self) -> int:
        return len(self.references)


class FlowModel(Protocol):
    latent_shape: Tuple[int, ...]

    def __call__(self, z_sigma: np.ndarray, sigma: float,
                 conditioning: Conditioning,
                 unconditional: bool = False) -> np.ndarray:
        ...


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not 0.0 <= sigma <= 1.0:
        raise DomainError('sigma must lie in [0, 1], got {0}'.format(sigma))
    return sigma


def noise(z0: np.ndarray, eps: np.ndarray, sigma: float) -> NoisedState:
    """Interpolate towards noise and return the constant flow target."""
    sigma = _check_sigma(sigma)
    z0, eps = np.asarray(z0, dtype=float), np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise ShapeError('clean latent {0} and noise {1} differ in shape'
                         .format(z0.shape, eps.shape))
    return NoisedState((1.0 - sigma) * z0 + sigma * eps, eps - z0, sigma)


def recover(z_sigma: Grid, u_hat: Grid, sigma: float) -> Grid:
    """Clean-latent estimate ``z_sigma - sigma * u_hat``.
    A Tensor `u_hat` keeps the result differentiable.
    """
    if tuple(z_sigma.shape) != tuple(u_hat.shape):
        raise ShapeError('noised latent {0} and flow {1} differ in shape'
                         .format(z_sigma.shape, u_hat.shape))
    if isinstance(u_hat, Tensor) or isinstance(z_sigma, Tensor):
        return z_sigma - u_hat * float(sigma)
    return z_sigma - float(sigma) * u_hat


def sample_sigma(rng: np.random.Generator) -> float:
    """Training noise level, uniform on [0, 1]."""
    return float(rng.uniform(0.0, 1.0))


def initial_noise(shape: Sequence[int], seed: int) -> np.ndarray:
    """The sampler's starting point at ``sigma = 1`` for `seed`."""
    return np.random.default_rng(seed).standard_normal(tuple(shape))


def sigma_grid(steps: int) -> np.ndarray:
    """``steps + 1`` uniformly spaced levels from 1 down to 0."""
    if steps < 1:
        raise DomainError('sampler steps must be >= 1, got {0}'.format(steps))
    return np.linspace(1.0, 0.0, steps + 1)


def guided_flow(model: FlowModel, z: np.ndarray, sigma: float,
                conditioning: Conditioning, guidance_scale: float
                ) -> np.ndarray:
    """``u_uncond + g * (u_cond - u_uncond)``.
    At ``g == 1`` the conditional prediction is returned as is and the
    unconditional branch is not evaluated.
    """
    u_cond = np.asarray(model(z, sigma, conditioning), dtype=float)
    if u_cond.shape != z.shape:
        raise ShapeError('model returned a flow of shape {0} for a latent of '
                         'shape {1}'.format(u_cond.shape, z.shape))
    if guidance_scale == 1.0:
        return u_cond
    u_uncond = np.asarray(model(z, sigma, conditioning, unconditional=True),
                          dtype=float)
    return u_uncond + guidance_scale * (u_cond - u_uncond)


def integrate(model: FlowModel, conditioning: Conditioning,
              cfg: SamplerConfig = None) -> np.ndarray:
    """Euler-integrate the guided flow from pure noise to ``sigma = 0``.
    :param model: Callable flow predictor exposing `latent_shape`
    :param conditioning: Degraded observation and references
    :param cfg: Step count, guidance scale and noise seed
    :return: The clean latent estimate
    :rtype: numpy.ndarray
    """
    cfg = (cfg or SamplerConfig()).validate()
    sigmas = sigma_grid(cfg.steps)
    z = initial_noise(model.latent_shape, cfg.seed)
    logger.debug('integrating %d steps, guidance %.2f, seed %d, %d refs',
                 cfg.steps, cfg.guidance_scale, cfg.seed,
                 conditioning.n_references)
    for sigma, sigma_next in zip(sigmas[:-1], sigmas[1:]):
        u = guided_flow(model, z, float(sigma), conditioning,
                        cfg.guidance_scale)
        z = z + (sigma_next - sigma) * u
    return z


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
