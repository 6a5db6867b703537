#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/imageio.py

"""Read and write ``(C, H, W)`` images in [0, 1] as PNG or binary PPM."""

import os

import cv2
import numpy as np

from anchorflow.errors import ImageReadError, ShapeError

__all__ = ['read_image', 'write_image']

_PPM = ('.ppm', '.pnm')


def read_image(path: str, size: int = None) -> np.ndarray:
    """Load a grayscale ``(1, H, W)`` image; colour files are converted.
    A `size` other than the file's resizes with area interpolation.
    """
    pixels = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if pixels is None:
        raise ImageReadError('cannot read image {0}'.format(path))
    image = pixels.astype(np.float64) / 255.0
    if size is not None and image.shape != (size, size):
        image = cv2.resize(image, (size, size), interpolation=cv2.INTER_AREA)
    return image[None, :, :]


def write_image(path: str, image: np.ndarray) -> None:
    """Store a ``(1, H, W)`` image; ``.ppm`` files are written as P6."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError('expected a (1, H, W) image, got {0}'.format(image.shape))
    pixels = np.round(np.clip(image[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    if os.path.splitext(str(path))[1].lower() in _PPM:
        pixels = cv2.cvtColor(pixels, cv2.COLOR_GRAY2BGR)
    try:
        written = cv2.imwrite(str(path), pixels)
    except cv2.error as error:
        raise ImageReadError('cannot write image {0}: {1}'.format(path, error))
    if not written:
        raise ImageReadError('cannot write image {0}'.format(path))
