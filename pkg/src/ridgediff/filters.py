"""Ridge-flow filters shared by the generator, the enhancer and the metrics.

Angle convention: radians, counter-clockwise from +x with the y axis
pointing up, so a direction ``a`` is the pixel step ``(cos a, -sin a)``
in (column, row) coordinates.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

N_ORIENT = 16


@lru_cache(maxsize=64)
def gabor_bank(freq: float, n_orient: int = N_ORIENT) -> tuple[np.ndarray, ...]:
    """Zero-mean even Gabor kernels tuned to ``freq`` cycles/pixel.

    Kernel ``k`` passes ridges of orientation ``k * pi / n_orient``.
    """
    sigma_across = 0.55 / freq
    sigma_along = 0.8 / freq
    half = int(np.ceil(2.5 * max(sigma_across, sigma_along)))
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    kernels = []
    for k in range(n_orient):
        th = k * np.pi / n_orient
        across = xx * np.sin(th) + yy * np.cos(th)
        along = xx * np.cos(th) - yy * np.sin(th)
        env = np.exp(-0.5 * (across**2 / sigma_across**2 + along**2 / sigma_along**2))
        ker = env * np.cos(2 * np.pi * freq * across)
        ker -= env * (ker.sum() / env.sum())
        ker /= np.abs(ker).sum()
        ker.setflags(write=False)
        kernels.append(ker)
    return tuple(kernels)


def oriented_filter(img: np.ndarray, theta: np.ndarray, freq: float, n_orient: int = N_ORIENT) -> np.ndarray:
    """Band-pass ``img`` along the per-pixel ridge orientation ``theta``.

    Responses of the Gabor bank are blended linearly between the two
    orientation bins bracketing each pixel's angle.
    """
    responses = np.stack([fftconvolve(img, k, mode="same") for k in gabor_bank(round(float(freq), 6), n_orient)])
    pos = np.mod(theta, np.pi) / (np.pi / n_orient)
    lo = np.floor(pos).astype(int) % n_orient
    hi = (lo + 1) % n_orient
    frac = pos - np.floor(pos)
    r_lo = np.take_along_axis(responses, lo[None], 0)[0]
    r_hi = np.take_along_axis(responses, hi[None], 0)[0]
    return r_lo * (1 - frac) + r_hi * frac


def gradients(img: np.ndarray, presmooth: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Sobel gradients ``(gx, gy_up)`` with the y component pointing up."""
    a = ndimage.gaussian_filter(img, presmooth, mode="nearest") if presmooth > 0 else img
    gx = ndimage.sobel(a, axis=1, mode="nearest") / 8.0
    gy = -ndimage.sobel(a, axis=0, mode="nearest") / 8.0
    return gx, gy


def structure_tensor_orientation(img: np.ndarray, sigma: float = 3.0, presmooth: float = 1.0):
    """Pixel-wise ridge orientation in ``[0, pi)`` and coherence in ``[0, 1]``."""
    gx, gy = gradients(img, presmooth)
    gxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    gyy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    gxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return tensor_to_orientation(gxx, gyy, gxy)


def tensor_to_orientation(gxx, gyy, gxy):
    """Least-squares ridge orientation and coherence from tensor components."""
    num = np.sqrt((gxx - gyy) ** 2 + 4 * gxy**2)
    den = gxx + gyy
    coherence = np.divide(num, den, out=np.zeros_like(den), where=den > 1e-12)
    # dominant gradient direction, turned a quarter to run along the ridge
    theta = 0.5 * np.arctan2(2 * gxy, gxx - gyy) + np.pi / 2
    return np.mod(theta, np.pi), np.clip(coherence, 0.0, 1.0)


def block_sum(a: np.ndarray, block: int) -> np.ndarray:
    """Sum over non-overlapping ``block x block`` tiles (partial edge tiles kept)."""
    h, w = a.shape
    nby, nbx = -(-h // block), -(-w // block)
    padded = np.zeros((nby * block, nbx * block), dtype=a.dtype)
    padded[:h, :w] = a
    return padded.reshape(nby, block, nbx, block).sum(axis=(1, 3))
