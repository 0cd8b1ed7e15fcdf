"""Denoising diffusion core: schedule, forward process, ancestral sampler.

Images live in a latent space scaled by ``x -> 2x - 1``.  A model is any
callable ``model(x, t)`` taking a ``(N, side, side)`` array and an integer
step array of length N and returning the predicted noise with the shape of
``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidSchedule
from .imagecore import GrayImage, as_array

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances and their derived products, indexed by ``t - 1``."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        for name, arr in (("alpha", alpha), ("alpha_bar", alpha_bar), ("sigma", np.sqrt(beta))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.beta.size

    def at(self, t):
        """``(beta_t, alpha_t, alpha_bar_t)`` for 1-based step ``t``."""
        i = np.asarray(t) - 1
        return self.beta[i], self.alpha[i], self.alpha_bar[i]

    def _check_step(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step must lie in [1, {self.T}]")


def linear_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                    beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Betas interpolated linearly from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 2:
        raise InvalidSchedule(f"T must be an integer >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidSchedule(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T)))


# --------------------------------------------------------------------------- latent images


@dataclass(frozen=True, eq=False)
class LatentImage:
    """Square model-space image; values are unbounded reals."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"latent images are square 2-D arrays, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_gray(cls, img) -> "LatentImage":
        return cls(to_latent(as_array(img)))

    def to_gray(self) -> GrayImage:
        return GrayImage(to_unit(self.data))


def to_latent(a):
    return 2.0 * np.asarray(a, dtype=np.float64) - 1.0


def to_unit(x):
    """Map latent values back to intensities, clamping to ``[0, 1]``."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


@dataclass(frozen=True)
class BranchSpec:
    d: int = 400
    K: int = 4

    def validate(self, T: int) -> "BranchSpec":
        if not 1 <= self.d < T:
            raise ValueError(f"branch step d must lie in [1, {T - 1}], got {self.d}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        return self


# --------------------------------------------------------------------------- forward process


def _arr(x):
    return x.data if isinstance(x, LatentImage) else np.asarray(x)


def q_sample(x0, t, eps, s: NoiseSchedule):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` may be a scalar or one step per leading batch entry.  Returns the
    same kind of object as ``x0``.
    """
    a, e = _arr(x0), _arr(eps)
    if a.shape != e.shape:
        raise DimensionMismatch(f"x0 has shape {a.shape} but eps has shape {e.shape}")
    s._check_step(t)
    ab = s.alpha_bar[np.asarray(t) - 1]
    if np.ndim(ab):
        ab = ab.reshape(ab.shape + (1,) * (a.ndim - ab.ndim))
    out = np.sqrt(ab) * a + np.sqrt(1.0 - ab) * e
    return LatentImage(out) if isinstance(x0, LatentImage) else out


def training_pair(x0, s: NoiseSchedule, rng: np.random.Generator):
    """Draw ``t ~ U{1..T}`` and ``eps ~ N(0, I)``; return ``(x_t, t, eps)``.

    A batch ``x0`` of shape ``(N, ...)`` receives one step per sample.
    """
    a = _arr(x0)
    if isinstance(x0, LatentImage) or a.ndim == 2:
        t = int(rng.integers(1, s.T + 1))
    else:
        t = rng.integers(1, s.T + 1, size=a.shape[0])
    eps = rng.standard_normal(a.shape)
    xt = q_sample(a, t, eps, s)
    if isinstance(x0, LatentImage):
        return LatentImage(xt), t, eps
    return xt, t, eps


# --------------------------------------------------------------------------- reverse process


def _call_model(model, x, t):
    batch = x[None] if x.ndim == 2 else x
    eps = np.asarray(model(batch, np.full(batch.shape[0], t, dtype=np.int64)), dtype=np.float64)
    if eps.shape != batch.shape:
        raise DimensionMismatch(f"model returned shape {eps.shape} for input {batch.shape}")
    return eps[0] if x.ndim == 2 else eps


def ddpm_step(model, x_t, t: int, s: NoiseSchedule, rng: np.random.Generator | None = None,
              noise_scale: float = 1.0):
    """One ancestral step ``x_t -> x_{t-1}`` with the epsilon parameterization.

    ``noise_scale`` multiplies ``sigma_t``; 0 gives the deterministic mean
    update.  No noise is drawn at ``t == 1`` or when the scale is 0.
    """
    x = _arr(x_t).astype(np.float64, copy=False)
    s._check_step(t)
    beta, alpha, abar = s.beta[t - 1], s.alpha[t - 1], s.alpha_bar[t - 1]
    eps = _call_model(model, x, t)
    mean = (x - (beta / np.sqrt(1.0 - abar)) * eps) / np.sqrt(alpha)
    if t > 1 and noise_scale != 0.0:
        mean = mean + noise_scale * s.sigma[t - 1] * rng.standard_normal(x.shape)
    return LatentImage(mean) if isinstance(x_t, LatentImage) else mean


def run_chain(model, x, t_from: int, t_to: int, s: NoiseSchedule, rng, noise_scale: float = 1.0,
              progress=None):
    """Apply ``ddpm_step`` for ``t = t_from .. t_to + 1`` and return ``x_{t_to}``."""
    for t in range(t_from, t_to, -1):
        x = ddpm_step(model, x, t, s, rng, noise_scale)
        if progress is not None:
            progress(t)
    return x


def sample_batch(model, s: NoiseSchedule, side: int, rng: np.random.Generator, n: int,
                 noise_scale: float = 1.0, progress=None) -> np.ndarray:
    """``n`` latent samples drawn jointly; returns an ``(n, side, side)`` array."""
    x = rng.standard_normal((n, side, side))
    return run_chain(model, x, s.T, 0, s, rng, noise_scale, progress)


def sample(model, s: NoiseSchedule, side: int, rng: np.random.Generator, n: int | None = None,
           batch_size: int = 64, noise_scale: float = 1.0):
    """Draw images from the model; one :class:`GrayImage` unless ``n`` is given.

    Batches of ``batch_size`` are drawn in order from the single generator,
    so the output is a function of the model, the schedule and the seed.
    """
    count = 1 if n is None else int(n)
    images = []
    while len(images) < count:
        m = min(batch_size, count - len(images))
        for x in sample_batch(model, s, side, rng, m, noise_scale):
            images.append(GrayImage(to_unit(x)))
    return images[0] if n is None else images


def branch_impressions(model, s: NoiseSchedule, spec: BranchSpec, side: int, rng: np.random.Generator,
                       noise_scale: float = 1.0, anchor_out: list | None = None) -> list[GrayImage]:
    """K impressions sharing one trajectory from ``T`` down to the anchor ``x_d``.

    ``noise_scale`` applies to the K continuations only.  When
    ``anchor_out`` is a list the anchor array is appended to it.
    """
    spec.validate(s.T)
    x = rng.standard_normal((1, side, side))
    anchor = run_chain(model, x, s.T, spec.d, s, rng)
    if anchor_out is not None:
        anchor_out.append(anchor[0].copy())
    branches = np.repeat(anchor, spec.K, axis=0)
    out = run_chain(model, branches, spec.d, 0, s, rng, noise_scale)
    return [GrayImage(to_unit(x)) for x in out]


def branch_identities(model, s: NoiseSchedule, spec: BranchSpec, side: int, rng: np.random.Generator,
                      n_identities: int, batch_size: int = 64) -> list[list[GrayImage]]:
    """Impressions for several identities, batching anchors and continuations.

    Anchors are drawn jointly in groups, then each group's ``K`` copies are
    continued jointly, so the work per identity matches
    :func:`branch_impressions` while keeping matrix products large.
    """
    spec.validate(s.T)
    per = max(1, batch_size // spec.K)
    out: list[list[GrayImage]] = []
    for start in range(0, n_identities, per):
        m = min(per, n_identities - start)
        x = rng.standard_normal((m, side, side))
        anchors = run_chain(model, x, s.T, spec.d, s, rng)
        branches = np.repeat(anchors, spec.K, axis=0)
        final = run_chain(model, branches, spec.d, 0, s, rng)
        for i in range(m):
            out.append([GrayImage(to_unit(v)) for v in final[i * spec.K : (i + 1) * spec.K]])
    return out
