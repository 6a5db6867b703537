#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/checkpoint.py

"""Binary model checkpoints.

Layout, all integers little-endian u32::

    b"ICFL" | version | len(config) | config text (utf-8)
    | n_tensors | n_tensors x (len(name) | name | rank | extents | f32 data)

The config text is the flat config file of the model followed by
``meta.<key> = <value>`` lines.
"""

from typing import BinaryIO, Dict, Mapping, Tuple

import logging
import struct
from collections import OrderedDict

import numpy as np

from anchorflow.backbone import RestorationModel
from anchorflow.config import dump_config, parse_config
from anchorflow.errors import CheckpointError, ConfigError

__all__ = ['MAGIC', 'VERSION', 'save_checkpoint', 'load_checkpoint',
           'write_checkpoint', 'read_checkpoint']

MAGIC = b'ICFL'
VERSION = 1
_META = 'meta.'

logger = logging.getLogger(__name__)


def _u32(value: int) -> bytes:
    return struct.pack('<I', value)


def write_checkpoint(handle: BinaryIO, model: RestorationModel,
                     metadata: Mapping[str, object] = None) -> None:
    text = dump_config(model.config)
    for key, value in (metadata or {}).items():
        text += '{0}{1} = {2}\n'.format(_META, key, value)
    config_bytes = text.encode('utf-8')
    handle.write(MAGIC + _u32(VERSION) + _u32(len(config_bytes)) + config_bytes)
    handle.write(_u32(len(model.registry)))
    for name, param in model.registry.items():
        encoded = name.encode('utf-8')
        handle.write(_u32(len(encoded)) + encoded + _u32(param.ndim))
        handle.write(b''.join(_u32(extent) for extent in param.shape))
        handle.write(np.ascontiguousarray(param.data, dtype='<f4').tobytes())


def save_checkpoint(path: str, model: RestorationModel,
                    metadata: Mapping[str, object] = None) -> None:
    with open(path, 'wb') as handle:
        write_checkpoint(handle, model, metadata)
    logger.debug('saved %d tensors to %s', len(model.registry), path)


class _Reader:

    def __init__(self, data: bytes) -> None:
        self.data, self.pos = data, 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError('checkpoint is truncated at byte {0}'
                                  .format(self.pos))
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack('<I', self.take(4))[0]


def read_checkpoint(data: bytes) -> Tuple[str, 'OrderedDict[str, np.ndarray]']:
    """Split raw checkpoint bytes into config text and named arrays."""
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError('not a checkpoint: bad magic')
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError('unsupported checkpoint version {0}'.format(version))
    text = reader.take(reader.u32()).decode('utf-8')
    tensors: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode('utf-8')
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(reader.take(4 * count), dtype='<f4')
        tensors[name] = payload.reshape(shape).astype(np.float64)
    if reader.pos != len(data):
        raise CheckpointError('{0} trailing bytes after the last tensor'
                              .format(len(data) - reader.pos))
    return text, tensors


def load_checkpoint(path: str) -> Tuple[RestorationModel, Dict[str, str]]:
    """Rebuild the model stored at `path`.
    :return: The model and the metadata it was saved with
    :rtype: tuple
    """
    try:
        with open(path, 'rb') as handle:
            data = handle.read()
    except OSError as error:
        raise CheckpointError('cannot read checkpoint {0}: {1}'
                              .format(path, error)) from error
    text, tensors = read_checkpoint(data)
    config_lines, metadata = [], {}
    for line in text.splitlines():
        if line.startswith(_META):
            key, _, value = line[len(_META):].partition('=')
            metadata[key.strip()] = value.strip()
        else:
            config_lines.append(line)
    try:
        config = parse_config('\n'.join(config_lines))
    except ConfigError as error:
        raise CheckpointError('checkpoint config is invalid: {0}'
                              .format(error)) from error
    model = RestorationModel(config)
    try:
        model.registry.load_state(tensors)
    except (KeyError, ValueError) as error:
        raise CheckpointError('checkpoint does not match its config: {0}'
                              .format(error)) from error
    logger.debug('loaded %d tensors from %s', len(tensors), path)
    return model, metadata
