"""Desk-scale diffusion lab for synthetic fingerprint generation.

The estimator classes follow the scikit-learn conventions (``fit``,
``transform``, ``get_params``); the modules underneath expose the same
functionality as plain functions.
"""

from .denoiser import DiffusionFingerprintGenerator
from .imagecore import GrayImage, load_image, save_image
from .matcher import PairTableMatcher
from .minutiae import MinutiaeExtractor, MinutiaeTemplate
from .preprocess import FingerprintPreprocessor

__version__ = "0.1.0"

__all__ = [
    "DiffusionFingerprintGenerator",
    "FingerprintPreprocessor",
    "GrayImage",
    "MinutiaeExtractor",
    "MinutiaeTemplate",
    "PairTableMatcher",
    "load_image",
    "save_image",
]
