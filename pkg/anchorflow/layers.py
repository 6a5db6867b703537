#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/layers.py

"""Parameterised building blocks over :mod:`anchorflow.numerics`.

Every layer registers its parameters in a shared
:class:`~anchorflow.numerics.ParameterRegistry` under a dotted name, so a
whole model is saved, loaded and optimised through one registry.
"""

from typing import Tuple

import math

import numpy as np

from anchorflow.numerics import (
    ArrayLike, ParameterRegistry, Tensor, as_tensor, gelu, matmul,
)

__all__ = ['INIT_STD', 'normal_init', 'Linear', 'LowRank', 'Mlp',
           'sinusoidal_embedding']

INIT_STD = 0.02


def normal_init(rng: np.random.Generator, shape: Tuple[int, ...],
                std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear:
    """``x @ W + b`` on the last axis.
    With ``zero=True`` both weight and bias start at exactly zero.
    """

    def __init__(self, registry: ParameterRegistry, name: str, d_in: int,
                 d_out: int, rng: np.random.Generator, zero: bool = False,
                 bias: bool = True, std: float = INIT_STD) -> None:
        self.name = name
        self.d_in, self.d_out = d_in, d_out
        weight = (np.zeros((d_in, d_out)) if zero
                  else normal_init(rng, (d_in, d_out), std))
        self.weight = registry.create(name + '.weight', weight)
        self.bias = (registry.create(name + '.bias', np.zeros(d_out))
                     if bias else None)

    def __repr__(self) -> str:
        return '<Linear {0} {1}->{2}>'.format(self.name, self.d_in, self.d_out)

    def __call__(self, x: ArrayLike) -> Tensor:
        out = matmul(as_tensor(x), self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LowRank:
    """Rank-r factorised map ``x @ A @ B`` with ``A: d_in x r``, ``B: r x d_out``.
    `zero_up` zero-initialises B so the map starts as exact zero.
    """

    def __init__(self, registry: ParameterRegistry, name: str, d_in: int,
                 rank: int, d_out: int, rng: np.random.Generator,
                 zero_up: bool = False) -> None:
        self.name, self.rank = name, rank
        self.down = registry.create(
            name + '.down', normal_init(rng, (d_in, rank), 1.0 / math.sqrt(d_in)))
        up = np.zeros((rank, d_out)) if zero_up else normal_init(rng, (rank, d_out))
        self.up = registry.create(name + '.up', up)

    def __call__(self, x: ArrayLike) -> Tensor:
        return matmul(matmul(as_tensor(x), self.down), self.up)

    def product(self) -> np.ndarray:
        """The dense ``d_in x d_out`` matrix the factors represent."""
        return self.down.data @ self.up.data


class Mlp:
    """Two linear layers with a GELU in between.
    `fan_in` draws each weight with std ``1 / sqrt(d_in)`` of its layer
    instead of the fixed `INIT_STD`.
    """

    def __init__(self, registry: ParameterRegistry, name: str, d_in: int,
                 d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_out: bool = False, fan_in: bool = False) -> None:
        std_1 = 1.0 / math.sqrt(d_in) if fan_in else INIT_STD
        std_2 = 1.0 / math.sqrt(d_hidden) if fan_in else INIT_STD
        self.fc1 = Linear(registry, name + '.fc1', d_in, d_hidden, rng,
                          std=std_1)
        self.fc2 = Linear(registry, name + '.fc2', d_hidden, d_out, rng,
                          zero=zero_out, std=std_2)

    def __call__(self, x: ArrayLike) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def sinusoidal_embedding(position: float, dim: int,
                         max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal code of a scalar: ``[cos(p f_k), sin(p f_k)]``.
    >>> sinusoidal_embedding(0.0, 4).tolist()
    [1.0, 1.0, 0.0, 0.0]
    """
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = position * freqs
    return np.concatenate([np.cos(args), np.sin(args)])


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
