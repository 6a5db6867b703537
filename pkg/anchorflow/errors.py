#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/errors.py

"""Exceptions raised by anchorflow.

Every error derives from :class:`AnchorFlowError` and from the builtin
it specialises, so ``except ValueError`` keeps working for callers that
do not know about this package.
"""

__all__ = [
    'AnchorFlowError', 'ShapeError', 'DomainError',
    'DegenerateEmbeddingError', 'DegenerateAnchorError',
    'ReferenceCountError', 'NonFiniteError', 'InvariantError',
    'CheckpointError', 'ConfigError', 'ImageReadError',
    'TrainingDivergedError',
]


class AnchorFlowError(Exception):
    """Root of all anchorflow errors."""


class ShapeError(AnchorFlowError, ValueError):
    """Extents of the operands do not fit together."""


class DomainError(AnchorFlowError, ValueError):
    """A value lies outside the range an operation is defined on."""


class DegenerateEmbeddingError(DomainError):
    """An identity embedding has (near) zero norm and no direction."""


class DegenerateAnchorError(DomainError):
    """Reference directions cancel out and the anchor has no direction."""


class ReferenceCountError(AnchorFlowError, ValueError):
    """More references than the model has temporal groups for."""


class NonFiniteError(AnchorFlowError, FloatingPointError):
    """An op produced NaN or Inf."""


class InvariantError(AnchorFlowError, AssertionError):
    """A runtime contract (loss identity, evaluation mode) was broken."""


class CheckpointError(AnchorFlowError, ValueError):
    """A checkpoint file is malformed or does not match the model."""


class ConfigError(AnchorFlowError, ValueError):
    """A config file or value is invalid."""


class ImageReadError(AnchorFlowError, OSError):
    """An image file could not be read or written."""


class TrainingDivergedError(AnchorFlowError, RuntimeError):
    """The training loss became non-finite."""
