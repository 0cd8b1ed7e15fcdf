"""Training-set preparation: quality filtering, crop-and-center, squarification.

Three variants support the leave-one-out ablation: the full pipeline, the
pipeline without the crop stage, and the pipeline without the quality
filter.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import EmptyFingerprint, RidgeDiffError
from .evaluate import quality_score
from .imagecore import GrayImage, as_array, resize_bilinear

log = logging.getLogger(__name__)


class Variant(str, Enum):
    FULL = "fp"
    NO_CROP = "nocrop"
    NO_FILTER = "nofilter"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"fp": cls.FULL, "fullpipeline": cls.FULL, "full": cls.FULL,
                   "nocrop": cls.NO_CROP, "nofilter": cls.NO_FILTER}
        if key not in aliases:
            raise ValueError(f"unknown preprocessing variant {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class PreprocessConfig:
    variant: Variant = Variant.FULL
    crop_mean_threshold: float = 0.75
    ink_threshold: float = 0.5
    min_quality: float = 40.0
    output_side: int = 64

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 0.0 <= self.crop_mean_threshold <= 1.0:
            raise ValueError("crop_mean_threshold must lie in [0, 1]")
        if not 0.0 <= self.ink_threshold <= 1.0:
            raise ValueError("ink_threshold must lie in [0, 1]")
        if not 0.0 <= self.min_quality <= 100.0:
            raise ValueError("min_quality must lie in [0, 100]")
        if self.output_side < 16:
            raise ValueError("output_side must be >= 16")


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)


def ink_bounding_box(img, ink_threshold: float = 0.5) -> BoundingBox | None:
    """Tightest box around pixels darker than ``ink_threshold``, or None."""
    ink = as_array(img) < ink_threshold
    if not ink.any():
        return None
    rows = np.flatnonzero(ink.any(axis=1))
    cols = np.flatnonzero(ink.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def ink_centroid(a: np.ndarray) -> tuple[float, float]:
    """Darkness-weighted first moment ``(x, y)``; the image center if blank."""
    w = 1.0 - a
    total = w.sum()
    if total <= 0:
        return ((a.shape[1] - 1) / 2, (a.shape[0] - 1) / 2)
    ys, xs = np.indices(a.shape)
    return float((w * xs).sum() / total), float((w * ys).sum() / total)


def _paste(canvas: np.ndarray, patch: np.ndarray, top: int, left: int) -> None:
    h, w = patch.shape
    H, W = canvas.shape
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + h, H), min(left + w, W)
    if y1 > y0 and x1 > x0:
        canvas[y0:y1, x0:x1] = patch[y0 - top : y1 - top, x0 - left : x1 - left]


def pad_to_square(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    side = max(h, w)
    canvas = np.ones((side, side))
    _paste(canvas, a, (side - h) // 2, (side - w) // 2)
    return canvas


def crop_and_center(img, cfg: PreprocessConfig | None = None, allow_crop: bool = True) -> GrayImage:
    """Crop whitespace-dominated scans around the ink, center, and resize.

    Crops only when the mean intensity exceeds ``cfg.crop_mean_threshold``:
    the ink box padded by 5% per side is re-centered on its darkness
    centroid on a white square canvas.  Other images are padded to a
    square.  The result is resized to ``cfg.output_side``.
    """
    cfg = cfg or PreprocessConfig()
    a = as_array(img)
    if allow_crop and a.mean() > cfg.crop_mean_threshold:
        box = ink_bounding_box(a, cfg.ink_threshold)
        if box is None:
            raise EmptyFingerprint("no ink below the threshold in a whitespace-dominated image")
        px, py = int(round(0.05 * box.width)), int(round(0.05 * box.height))
        x0, y0 = max(box.x0 - px, 0), max(box.y0 - py, 0)
        x1, y1 = min(box.x1 + px, a.shape[1]), min(box.y1 + py, a.shape[0])
        crop = a[y0:y1, x0:x1]
        side = max(crop.shape)
        cx, cy = ink_centroid(crop)
        canvas = np.ones((side, side))
        center = (side - 1) / 2
        _paste(canvas, crop, int(round(center - cy)), int(round(center - cx)))
        square = canvas
    else:
        square = pad_to_square(a)
    return resize_bilinear(GrayImage(square), cfg.output_side, cfg.output_side)


def quality_filter(images, cfg: PreprocessConfig | None = None, scorer=quality_score) -> list:
    """Keep images scoring at least ``cfg.min_quality``, order preserved."""
    cfg = cfg or PreprocessConfig()
    return [im for im in images if scorer(im) >= cfg.min_quality]


def run_pipeline(images, cfg: PreprocessConfig | None = None, n_jobs: int = 1, scorer=quality_score,
                 return_indices: bool = False):
    """Apply the configured variant; images that fail are skipped and counted.

    With ``return_indices`` the input positions of the surviving images are
    returned alongside them.
    """
    cfg = cfg or PreprocessConfig()
    images = list(images)
    index = list(range(len(images)))
    if cfg.variant is not Variant.NO_FILTER:
        index = [i for i in index if scorer(images[i]) >= cfg.min_quality]
    images = [images[i] for i in index]
    allow_crop = cfg.variant is not Variant.NO_CROP

    def one(im):
        try:
            return crop_and_center(im, cfg, allow_crop=allow_crop)
        except RidgeDiffError as exc:
            return exc

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, images))
    else:
        results = [one(im) for im in images]
    kept = [(i, r) for i, r in zip(index, results) if isinstance(r, GrayImage)]
    failed = len(results) - len(kept)
    if failed:
        log.warning("preprocess skipped %d image(s) that failed cropping", failed)
    out = [r for _, r in kept]
    if return_indices:
        return out, [i for i, _ in kept]
    return out


class FingerprintPreprocessor(TransformerMixin, BaseEstimator):
    """Transformer applying one preprocessing variant to a list of images."""

    def __init__(self, variant="fp", crop_mean_threshold=0.75, ink_threshold=0.5,
                 min_quality=40.0, output_side=64, n_jobs=1):
        self.variant = variant
        self.crop_mean_threshold = crop_mean_threshold
        self.ink_threshold = ink_threshold
        self.min_quality = min_quality
        self.output_side = output_side
        self.n_jobs = n_jobs

    def config(self) -> PreprocessConfig:
        return PreprocessConfig(Variant.parse(self.variant), self.crop_mean_threshold,
                                self.ink_threshold, self.min_quality, self.output_side)

    def fit(self, X=None, y=None):
        self.config()
        return self

    def transform(self, X):
        from .validation import check_images

        return run_pipeline(check_images(X, min_count=0), self.config(), self.n_jobs)
