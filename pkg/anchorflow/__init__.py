#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/__init__.py

__all__ = [
    'Config', 'load_config', 'RestorationModel', 'Conditioning', 'integrate',
    'save_checkpoint', 'load_checkpoint', 'degrade', 'make_dataset',
    'make_benchmark', 'train', 'evaluate', 'restore', 'AnchorFlowError',
]
__version__ = '0.1.0'

from anchorflow.backbone import RestorationModel
from anchorflow.checkpoint import load_checkpoint, save_checkpoint
from anchorflow.config import Config, load_config
from anchorflow.data import make_benchmark, make_dataset
from anchorflow.degrade import degrade
from anchorflow.errors import AnchorFlowError
from anchorflow.evaluate import evaluate, restore
from anchorflow.flow import Conditioning, integrate
from anchorflow.train import train
