"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .imagecore import GrayImage
from .minutiae import MinutiaeTemplate


def check_image(img, square: bool = False) -> GrayImage:
    """Coerce a GrayImage or 2-D array in ``[0, 1]`` to :class:`GrayImage`."""
    if not isinstance(img, GrayImage):
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D image, got shape {arr.shape}")
        img = GrayImage(arr)
    if square and img.width != img.height:
        raise DimensionMismatch(f"expected a square image, got {img.width}x{img.height}")
    return img


def check_images(X, square: bool = False, same_size: bool = False, min_count: int = 1) -> list[GrayImage]:
    """Validate a collection of images (a list or an ``(N, H, W)`` array)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    images = [check_image(im, square) for im in X]
    if len(images) < min_count:
        raise ValueError(f"need at least {min_count} image(s), got {len(images)}")
    if same_size and images and any(im.shape != images[0].shape for im in images):
        raise DimensionMismatch("all images must have the same size")
    return images


def check_templates(X, min_count: int = 0) -> list[MinutiaeTemplate]:
    templates = list(X)
    for t in templates:
        if not isinstance(t, MinutiaeTemplate):
            raise TypeError(f"expected MinutiaeTemplate, got {type(t).__name__}")
    if len(templates) < min_count:
        raise ValueError(f"need at least {min_count} template(s), got {len(templates)}")
    return templates
