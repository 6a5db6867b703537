#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/config.py

"""Flat ``key = value`` configuration.

One :class:`Config` holds every knob of the project. Its field names are
the keys of the config file, so a file only lists what it overrides:

>>> cfg = parse_config('''
... # a comment
... lambda_id = 0.5
... ref_mix = 0.25, 0.25, 0.25, 0.25
... ''')
>>> cfg.lambda_id, cfg.ref_mix
(0.5, (0.25, 0.25, 0.25, 0.25))
>>> cfg.loss().alpha_fm
0.75

Typed, validated views (:class:`BackboneConfig`, :class:`LossConfig`, ...)
are derived from it by the components that need them.
"""

from typing import Dict, Mapping, Tuple

import dataclasses
import math
from dataclasses import dataclass, fields

from anchorflow.errors import ConfigError

__all__ = [
    'PUBLISHED_DEFAULTS', 'VARIANTS', 'Config', 'RopeConfig', 'BackboneConfig',
    'LossConfig', 'SamplerConfig', 'DegradeConfig', 'TrainConfig',
    'parse_config', 'load_config', 'dump_config',
]

# published constants of the full-scale system
PUBLISHED_DEFAULTS: Dict[str, object] = {
    'alpha_fm': 0.75,
    'lambda_id': 0.30,
    'lambda_h': 0.25,
    'omega_min': 0.25,
    'temperature': 1.0,
    'memory_budget': 256,
    'rank': 16,
    's_deg': 1.0,
    'id_dim': 512,
    'rope_theta': 2000.0,
    'rope_axis_dims': (32, 32, 32, 32),
    'steps': 12,
    'guidance': 4.0,
    'seed': 42,
    'ref_mix': (0.3, 0.3, 0.2, 0.2),
    'strength_buckets': (0.5, 0.3, 0.2),
}

# ablation ladder, each entry adds one mechanism to the previous
VARIANTS = ('concat', 'struct', 'id', 'single_route', 'full')


@dataclass(frozen=True)
class RopeConfig:
    theta: float = 2000.0
    axis_dims: Tuple[int, int, int, int] = (4, 4, 4, 4)

    @property
    def head_dim(self) -> int:
        return sum(self.axis_dims)

    def validate(self) -> 'RopeConfig':
        if len(self.axis_dims) != 4:
            raise ConfigError('rope needs four axis dims (t, h, w, l), got {0}'
                              .format(self.axis_dims))
        for dim in self.axis_dims:
            if dim <= 0 or dim % 2:
                raise ConfigError('rope axis dims must be even and positive, '
                                  'got {0}'.format(self.axis_dims))
        if self.theta <= 0:
            raise ConfigError('rope theta must be positive')
        return self


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 16
    image_channels: int = 1
    latent_factor: int = 2
    patch: int = 2
    d_model: int = 64
    n_heads: int = 4
    head_dim: int = 16
    n_double_blocks: int = 2
    n_single_blocks: int = 2
    mlp_ratio: int = 2
    n_text_tokens: int = 1
    freq_dim: int = 32
    rope: RopeConfig = RopeConfig()
    memory_budget: int = 8
    memory_split: int = 4
    rank: int = 4
    id_dim: int = 32
    stub_grid: int = 8
    stub_seed: int = 1234
    s_deg: float = 1.0
    temperature: float = 1.0
    variant: str = 'full'
    init_seed: int = 42

    @property
    def latent_channels(self) -> int:
        return self.image_channels * self.latent_factor ** 2

    @property
    def latent_size(self) -> int:
        return self.image_size // self.latent_factor

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        return self.latent_channels, self.latent_size, self.latent_size

    @property
    def grid(self) -> Tuple[int, int]:
        side = self.latent_size // self.patch
        return side, side

    @property
    def patch_dim(self) -> int:
        return self.latent_channels * self.patch ** 2

    @property
    def uses_residual(self) -> bool:
        return VARIANTS.index(self.variant) >= VARIANTS.index('struct')

    @property
    def uses_identity(self) -> bool:
        return VARIANTS.index(self.variant) >= VARIANTS.index('id')

    @property
    def memory_routes(self) -> int:
        return {'single_route': 1, 'full': 2}.get(self.variant, 0)

    def validate(self) -> 'BackboneConfig':
        self.rope.validate()
        if self.variant not in VARIANTS:
            raise ConfigError('unknown variant {0!r}, expected one of {1}'
                              .format(self.variant, VARIANTS))
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError('d_model ({0}) must equal n_heads * head_dim '
                              '({1} * {2})'.format(self.d_model, self.n_heads,
                                                   self.head_dim))
        if self.head_dim != self.rope.head_dim:
            raise ConfigError('head_dim ({0}) must equal the sum of rope axis '
                              'dims {1}'.format(self.head_dim,
                                                self.rope.axis_dims))
        if self.image_size % self.latent_factor:
            raise ConfigError('image_size must be divisible by latent_factor')
        if self.latent_size % self.patch:
            raise ConfigError('latent size {0} is not divisible by patch {1}'
                              .format(self.latent_size, self.patch))
        if self.image_size % self.stub_grid:
            raise ConfigError('image_size must be divisible by stub_grid')
        if not 0 < self.memory_split < self.memory_budget:
            raise ConfigError('memory_split must lie strictly inside the '
                              'memory budget {0}'.format(self.memory_budget))
        if self.rank < 1 or self.n_text_tokens < 1 or self.freq_dim % 2:
            raise ConfigError('rank and n_text_tokens must be positive and '
                              'freq_dim even')
        if self.temperature <= 0:
            raise ConfigError('temperature must be positive')
        return self


@dataclass(frozen=True)
class LossConfig:
    alpha_fm: float = 0.75
    lambda_id: float = 0.30
    lambda_h: float = 0.25
    omega_min: float = 0.25

    def validate(self) -> 'LossConfig':
        if min(self.alpha_fm, self.lambda_id, self.lambda_h) < 0:
            raise ConfigError('loss multipliers must be non-negative')
        if not 0 < self.omega_min <= 1:
            raise ConfigError('omega_min must lie in (0, 1]')
        return self


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 12
    guidance_scale: float = 4.0
    seed: int = 42

    def validate(self) -> 'SamplerConfig':
        if self.steps < 1:
            raise ConfigError('sampler steps must be >= 1')
        if self.guidance_scale < 0:
            raise ConfigError('guidance scale must be non-negative')
        return self


@dataclass(frozen=True)
class DegradeConfig:
    strength_buckets: Tuple[float, float, float] = (0.5, 0.3, 0.2)
    min_scale: int = 4
    max_scale: int = 10

    def validate(self) -> 'DegradeConfig':
        _check_distribution('strength_buckets', self.strength_buckets, 3)
        if not 1 <= self.min_scale <= self.max_scale:
            raise ConfigError('degradation scales must satisfy '
                              '1 <= min_scale <= max_scale')
        return self


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 42
    train_steps: int = 200
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    clip_norm: float = 1.0
    n_identities: int = 32
    refs_per_identity: int = 3
    ref_mix: Tuple[float, float, float, float] = (0.3, 0.3, 0.2, 0.2)
    log_every: int = 10

    def validate(self) -> 'TrainConfig':
        _check_distribution('ref_mix', self.ref_mix, 4)
        if self.train_steps < 0 or self.batch_size < 1:
            raise ConfigError('train_steps must be >= 0 and batch_size >= 1')
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError('lr must be positive and momentum in [0, 1)')
        if self.clip_norm < 0:
            raise ConfigError('clip_norm must be non-negative, 0 disables it')
        if self.n_identities < 1 or self.refs_per_identity < 0:
            raise ConfigError('need at least one identity')
        return self


@dataclass(frozen=True)
class Config:
    """Every key of the flat config file with its shipped default."""
    # objective
    alpha_fm: float = 0.75
    lambda_id: float = 0.30
    lambda_h: float = 0.25
    omega_min: float = 0.25
    # identity pathway
    temperature: float = 1.0
    id_dim: int = 32
    stub_grid: int = 8
    stub_seed: int = 1234
    # structure pathway
    memory_budget: int = 8
    memory_split: int = 0  # 0 → half of the budget
    rank: int = 4
    s_deg: float = 1.0
    # backbone
    image_size: int = 16
    image_channels: int = 1
    latent_factor: int = 2
    patch: int = 2
    d_model: int = 64
    n_heads: int = 4
    n_double_blocks: int = 2
    n_single_blocks: int = 2
    mlp_ratio: int = 2
    n_text_tokens: int = 1
    freq_dim: int = 32
    rope_theta: float = 2000.0
    rope_axis_dims: Tuple[int, int, int, int] = (4, 4, 4, 4)
    variant: str = 'full'
    # sampler
    steps: int = 12
    guidance: float = 4.0
    seed: int = 42
    # data and training
    ref_mix: Tuple[float, float, float, float] = (0.3, 0.3, 0.2, 0.2)
    strength_buckets: Tuple[float, float, float] = (0.5, 0.3, 0.2)
    n_identities: int = 32
    refs_per_identity: int = 3
    train_steps: int = 200
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    clip_norm: float = 1.0
    log_every: int = 10

    @classmethod
    def full_scale(cls) -> 'Config':
        """The published full-scale extents (not trainable on a desk)."""
        return cls(memory_budget=256, rank=16, id_dim=512,
                   rope_axis_dims=(32, 32, 32, 32), d_model=3072, n_heads=24)

    def replace(self, **changes: object) -> 'Config':
        return dataclasses.replace(self, **changes)

    def rope(self) -> RopeConfig:
        return RopeConfig(theta=self.rope_theta,
                          axis_dims=tuple(self.rope_axis_dims)).validate()

    def backbone(self) -> BackboneConfig:
        rope = self.rope()
        split = self.memory_split or self.memory_budget // 2
        return BackboneConfig(
            image_size=self.image_size, image_channels=self.image_channels,
            latent_factor=self.latent_factor, patch=self.patch,
            d_model=self.d_model, n_heads=self.n_heads,
            head_dim=self.d_model // self.n_heads,
            n_double_blocks=self.n_double_blocks,
            n_single_blocks=self.n_single_blocks, mlp_ratio=self.mlp_ratio,
            n_text_tokens=self.n_text_tokens, freq_dim=self.freq_dim,
            rope=rope, memory_budget=self.memory_budget, memory_split=split,
            rank=self.rank, id_dim=self.id_dim, stub_grid=self.stub_grid,
            stub_seed=self.stub_seed, s_deg=self.s_deg,
            temperature=self.temperature, variant=self.variant,
            init_seed=self.seed,
        ).validate()

    def loss(self) -> LossConfig:
        return LossConfig(self.alpha_fm, self.lambda_id, self.lambda_h,
                          self.omega_min).validate()

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.steps, self.guidance, self.seed).validate()

    def degrade(self) -> DegradeConfig:
        return DegradeConfig(tuple(self.strength_buckets)).validate()

    def training(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed, train_steps=self.train_steps,
            batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            clip_norm=self.clip_norm,
            n_identities=self.n_identities,
            refs_per_identity=self.refs_per_identity,
            ref_mix=tuple(self.ref_mix), log_every=self.log_every,
        ).validate()


def _check_distribution(name: str, probs: Tuple[float, ...], size: int) -> None:
    if len(probs) != size or min(probs) < 0 or not math.isclose(sum(probs), 1.0,
                                                                abs_tol=1e-9):
        raise ConfigError('{0} must be {1} non-negative values summing to 1, '
                          'got {2}'.format(name, size, probs))


def _coerce(name: str, default: object, raw: str) -> object:
    try:
        if isinstance(default, tuple):
            item = type(default[0])
            return tuple(item(part.strip()) for part in raw.split(',')
                         if part.strip())
        return type(default)(raw)
    except ValueError:
        raise ConfigError('bad value for {0}: {1!r}'.format(name, raw)) from None


def parse_config(text: str, base: Config = None) -> Config:
    """Parse flat ``key = value`` text on top of `base` (defaults if None).
    :param text: Config file contents
    :param base: Config whose values are overridden
    :return: The resulting config
    :rtype: Config
    """
    base = base or Config()
    known = {f.name: f for f in fields(Config)}
    changes: Dict[str, object] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('line {0}: expected key = value'.format(number))
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in known:
            raise ConfigError('line {0}: unknown key {1!r}'.format(number, key))
        changes[key] = _coerce(key, getattr(base, key), raw)
    return base.replace(**changes)


def load_config(path: str) -> Config:
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as error:
        raise ConfigError('cannot read config {0}: {1}'.format(path, error))
    return parse_config(text)


def dump_config(cfg: Config, only: Mapping[str, object] = None) -> str:
    """Serialise `cfg` in the same flat format `parse_config` reads."""
    lines = []
    for f in fields(Config):
        if only is not None and f.name not in only:
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ', '.join(repr(item) for item in value)
        lines.append('{0} = {1}'.format(f.name, value))
    return '\n'.join(lines) + '\n'


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
