#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/train.py

"""Fixed-seed training loop with momentum SGD."""

from typing import Dict, List, Sequence, Tuple

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from anchorflow.backbone import RestorationModel
from anchorflow.config import Config
from anchorflow.data import Corpus, TrainingSample, draw_sample, make_dataset
from anchorflow.errors import NonFiniteError, TrainingDivergedError
from anchorflow.flow import noise
from anchorflow.numerics import ParameterRegistry, Tensor, snap_float32
from anchorflow.objective import LossBreakdown, batch_loss, total_loss
from anchorflow.tokens import encode_latent

__all__ = ['LOG_FIELDS', 'MomentumSgd', 'TrainResult', 'sample_loss',
           'train', 'smooth_curve', 'write_loss_log']

LOG_FIELDS = ('step', 'l_fm', 'l_ref_id', 'l_hard', 'omega', 'lambda_h_star',
              'total', 'grad_norm')

logger = logging.getLogger(__name__)


class MomentumSgd:
    """``v = m v + g``; ``p -= lr v``, with optional global norm clipping.
    Parameters stay on the float32 grid after every step.
    """

    def __init__(self, registry: ParameterRegistry, lr: float,
                 momentum: float = 0.9, clip_norm: float = 0.0) -> None:
        self.registry = registry
        self.lr, self.momentum, self.clip_norm = lr, momentum, clip_norm
        self.velocity: Dict[str, np.ndarray] = {
            name: np.zeros_like(param.data) for name, param in registry.items()}

    def step(self) -> float:
        """Apply one update; returns the gradient norm before clipping."""
        grads = self.registry.gradients()
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(norm):
            raise NonFiniteError('gradient norm is not finite')
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        for name, param in self.registry.items():
            velocity = self.momentum * self.velocity[name] + scale * grads[name]
            self.velocity[name] = velocity
            param.data = snap_float32(param.data - self.lr * velocity)
        return norm


@dataclass
class TrainResult:
    model: RestorationModel
    curve: List[Dict[str, float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.curve])


def sample_loss(model: RestorationModel, sample: TrainingSample,
                config: Config) -> LossBreakdown:
    """Noise the sample's clean latent and score the model's flow."""
    cfg = model.cfg
    z0 = encode_latent(sample.target, cfg.latent_factor)
    state = noise(z0, sample.eps, sample.sigma)
    u_hat = model.predict_flow(state.z_sigma, sample.degraded,
                               sample.references, state.sigma)
    return total_loss(u_hat, state, sample.target, sample.references,
                      model.encoder, config.loss(), cfg.temperature,
                      cfg.latent_factor)


def _mean_row(step: int, breakdowns: Sequence[LossBreakdown],
              grad_norm: float) -> Dict[str, float]:
    row: Dict[str, float] = {'step': step}
    for key in LOG_FIELDS[1:-1]:
        row[key] = float(np.mean([b.as_row()[key] for b in breakdowns]))
    row['grad_norm'] = grad_norm
    return row


def _batch(model: RestorationModel, corpus: Corpus, rng: np.random.Generator,
           config: Config) -> Tuple[Tensor, List[LossBreakdown]]:
    training = config.training()
    breakdowns = []
    for _ in range(training.batch_size):
        index = int(rng.integers(len(corpus)))
        sample = draw_sample(corpus, index, rng, model.latent_shape,
                             training.ref_mix, config.degrade())
        breakdowns.append(sample_loss(model, sample, config))
    return batch_loss(breakdowns), breakdowns


def train(config: Config = None, corpus: Corpus = None,
          model: RestorationModel = None, progress: bool = False
          ) -> TrainResult:
    """Train from a fixed seed.
    :param config: All hyper-parameters, defaults if None
    :param corpus: Training identities, generated from the config if None
    :param model: Model to continue from, freshly initialised if None
    :param progress: Show a progress bar
    :return: The trained model and one loss row per step
    :rtype: TrainResult
    """
    config = config or Config()
    training = config.training()
    if corpus is None:
        corpus = make_dataset(training.n_identities, training.refs_per_identity,
                              training.seed, config.image_size)
    model = model or RestorationModel(config)
    optimizer = MomentumSgd(model.registry, training.lr, training.momentum,
                            training.clip_norm)
    rng = np.random.default_rng([training.seed, 7])
    result = TrainResult(model)
    logger.info('training %s for %d steps on %d identities',
                model, training.train_steps, len(corpus))
    for step in tqdm(range(training.train_steps), desc='train',
                     disable=not progress):
        try:
            loss, breakdowns = _batch(model, corpus, rng, config)
            if not math.isfinite(loss.item()):
                raise NonFiniteError('loss is not finite')
            model.registry.zero_grad()
            loss.backward()
            grad_norm = optimizer.step()
        except NonFiniteError as error:
            raise TrainingDivergedError(
                'training diverged at step {0}: {1}'.format(step, error)
            ) from error
        row = _mean_row(step, breakdowns, grad_norm)
        result.curve.append(row)
        if training.log_every and step % training.log_every == 0:
            logger.info('step %d l_fm %.4f total %.4f grad %.3f', step,
                        row['l_fm'], row['total'], grad_norm)
    return result


def smooth_curve(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average; the first entries average what exists."""
    values = np.asarray(values, dtype=float)
    sums = np.cumsum(values)
    out = np.empty_like(values)
    for i in range(len(values)):
        start = max(0, i - window + 1)
        total = sums[i] - (sums[start - 1] if start else 0.0)
        out[i] = total / (i - start + 1)
    return out


def write_loss_log(path: str, curve: Sequence[Dict[str, float]]) -> None:
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in curve:
            writer.writerow(row)
