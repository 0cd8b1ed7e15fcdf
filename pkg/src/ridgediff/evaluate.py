"""Quality, distribution and diversity metrics for fingerprint image sets.

The Frechet distance here is computed over a fixed 64-dimensional
handcrafted feature vector rather than network embeddings, so its values
live on their own scale.  The quality score is a 0-100 proxy built from
ridge-flow coherence, ridge-band energy, ridge contrast and minutiae count.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, FlatImage, GroupTooSmall, InsufficientSamples, IoFailure, NotPSD
from .filters import block_sum, tensor_to_orientation
from .imagecore import as_array
from .matcher import THRESHOLD, MatcherConfig, match_score, pairwise_scores

N_ORIENT_BINS = 32
N_GRAD_BINS = 16
GRID = 4
FEATURE_DIM = N_ORIENT_BINS + N_GRAD_BINS + GRID * GRID

QUALITY_WEIGHTS = (0.4, 0.3, 0.2, 0.1)
RIDGE_BAND = (0.05, 0.15)
MINUTIAE_RANGE = (8, 80)


# --------------------------------------------------------------------------- features


def feature_vector(img) -> np.ndarray:
    """64-d descriptor: orientation histogram, gradient histogram, block means.

    Layout, in order:

    * 32 bins of ridge orientation over ``[0, pi)``, each summing gradient
      magnitude, divided by the pixel count;
    * 16 bins of gradient magnitude over ``[0, 1]`` counting pixels with a
      non-zero gradient, divided by the pixel count;
    * the 16 mean intensities of a 4x4 block grid, row-major.
    """
    a = as_array(img)
    n = a.size
    gy_down, gx = np.gradient(a)
    gy = -gy_down
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)
    bins = np.minimum((theta / (np.pi / N_ORIENT_BINS)).astype(int), N_ORIENT_BINS - 1)
    orient_hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=N_ORIENT_BINS) / n

    nz = mag > 0
    gbins = np.minimum((mag[nz] * N_GRAD_BINS).astype(int), N_GRAD_BINS - 1)
    grad_hist = np.bincount(gbins, minlength=N_GRAD_BINS) / n

    rows = np.array_split(np.arange(a.shape[0]), GRID)
    cols = np.array_split(np.arange(a.shape[1]), GRID)
    block_means = np.array([a[np.ix_(r, c)].mean() for r in rows for c in cols])
    return np.concatenate([orient_hist, grad_hist, block_means])


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"covariance {cov.shape} does not match mean of length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-10):
            raise NotPSD("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_stats(images) -> FeatureStats:
    """Sample mean and unbiased covariance of the images' feature vectors."""
    images = list(images)
    if len(images) < 2:
        raise InsufficientSamples("fit_stats needs at least 2 images")
    feats = np.stack([feature_vector(im) for im in images])
    return stats_from_features(feats)


def stats_from_features(feats) -> FeatureStats:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] < 2:
        raise InsufficientSamples("need at least 2 feature vectors")
    cov = np.cov(feats, rowvar=False, ddof=1)
    return FeatureStats(feats.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min(initial=0.0) < -1e-8 * max(1.0, abs(w).max(initial=0.0)):
        raise NotPSD(f"matrix has eigenvalue {w.min():.3e}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(s1: FeatureStats, s2: FeatureStats) -> float:
    """``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`` between Gaussian fits.

    The trace of the product's square root is taken as the trace of
    ``sqrt(S1^(1/2) S2 S1^(1/2))``, a symmetric matrix with the same
    spectrum, diagonalized by ``eigh``.
    """
    if s1.dim != s2.dim:
        raise DimensionMismatch(f"feature dims differ: {s1.dim} vs {s2.dim}")
    root1 = _psd_sqrt(s1.cov)
    _psd_sqrt(s2.cov)  # PSD check only
    inner = root1 @ s2.cov @ root1
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = s1.mean - s2.mean
    d = float(diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * tr_sqrt)
    return max(d, 0.0)


# --------------------------------------------------------------------------- quality


@dataclass(frozen=True)
class QualityComponents:
    coherence: float
    band_energy: float
    contrast: float
    minutiae: float
    minutiae_count: int

    def score(self, weights=QUALITY_WEIGHTS) -> float:
        parts = (self.coherence, self.band_energy, self.contrast, self.minutiae)
        return float(np.clip(100.0 * sum(w * p for w, p in zip(weights, parts)), 0.0, 100.0))


def _band_mask(shape, band=RIDGE_BAND):
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    r = np.hypot(fx, fy)
    return (r >= band[0]) & (r <= band[1])


def orientation_coherence(a: np.ndarray, block: int = 16) -> float:
    """Mean block coherence over blocks that carry any gradient energy."""
    gy_down, gx = np.gradient(a)
    gy = -gy_down
    gxx, gyy, gxy = block_sum(gx * gx, block), block_sum(gy * gy, block), block_sum(gx * gy, block)
    _, coh = tensor_to_orientation(gxx, gyy, gxy)
    live = (gxx + gyy) > 1e-10
    return float(coh[live].mean()) if live.any() else 0.0


def minutiae_plausibility(count: int, lo: int = MINUTIAE_RANGE[0], hi: int = MINUTIAE_RANGE[1]) -> float:
    """1 inside ``[lo, hi]``; linear falloff to 0 at 0 and at ``2 * hi``."""
    if count < lo:
        return count / lo
    if count > hi:
        return max(0.0, 1.0 - (count - hi) / hi)
    return 1.0


def quality_components(img) -> QualityComponents:
    from .minutiae import extract_template

    a = as_array(img)
    centered = a - a.mean()
    power = np.abs(np.fft.fft2(centered)) ** 2
    total = power.sum()
    if total <= 1e-20:
        return QualityComponents(0.0, 0.0, 0.0, 0.0, 0)
    band = _band_mask(a.shape)
    band_power = power[band].sum()
    # Parseval: band-limited standard deviation from the band's share of power
    band_std = np.sqrt(band_power) / a.size
    try:
        count = len(extract_template(a))
    except FlatImage:
        count = 0
    return QualityComponents(
        coherence=orientation_coherence(a),
        band_energy=float(band_power / total),
        contrast=float(min(1.0, 4.0 * band_std)),
        minutiae=minutiae_plausibility(count),
        minutiae_count=count,
    )


def quality_score(img, weights=QUALITY_WEIGHTS) -> float:
    """0-100 print quality proxy; higher is better."""
    return quality_components(img).score(weights)


@dataclass(frozen=True)
class QualityReport:
    scores: tuple[float, ...]
    mean: float
    std: float


def quality_report(images, weights=QUALITY_WEIGHTS) -> QualityReport:
    scores = tuple(quality_score(im, weights) for im in images)
    arr = np.asarray(scores) if scores else np.zeros(0)
    return QualityReport(scores, float(arr.mean()) if arr.size else 0.0, float(arr.std(ddof=0)) if arr.size else 0.0)


# --------------------------------------------------------------------------- diversity and impressions


@dataclass(frozen=True)
class DiversitySummary:
    mean: float
    std: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    count: int
    scores: tuple[int, ...]


def score_histogram(scores, width: int = 5, upper: int = 500):
    edges = np.arange(0, upper + width, width)
    clipped = np.clip(np.asarray(scores, dtype=np.float64), 0, upper - 1e-9)
    hist, _ = np.histogram(clipped, bins=edges)
    return hist, edges


def summarize_scores(scores) -> DiversitySummary:
    scores = tuple(int(s) for s in scores)
    arr = np.asarray(scores, dtype=np.float64)
    hist, edges = score_histogram(arr)
    mean = float(arr.mean()) if arr.size else 0.0
    std = float(arr.std(ddof=0)) if arr.size else 0.0
    return DiversitySummary(mean, std, hist, edges, len(scores), scores)


def diversity_report(templates, omit_zero: bool = False, cfg: MatcherConfig | None = None) -> DiversitySummary:
    """Distribution of all pairwise matcher scores; lower means more diverse."""
    rows = pairwise_scores(list(templates), omit_zero, cfg)
    return summarize_scores(s for _, _, s in rows)


@dataclass(frozen=True)
class ImpressionReport:
    scores: tuple[int, ...]
    cdf_x: np.ndarray
    cdf_y: np.ndarray
    fraction_above: float
    max_score: int
    threshold: int


def empirical_cdf(scores):
    arr = np.sort(np.asarray(scores, dtype=np.float64))
    if arr.size == 0:
        return np.zeros(0), np.zeros(0)
    xs, counts = np.unique(arr, return_counts=True)
    return xs, np.cumsum(counts) / arr.size


def intra_group_scores(groups, cfg: MatcherConfig | None = None) -> list[int]:
    scores = []
    for g, group in enumerate(groups):
        group = list(group)
        if len(group) < 2:
            raise GroupTooSmall(f"group {g} has {len(group)} template(s), need >= 2")
        scores.extend(s for _, _, s in pairwise_scores(group, False, cfg))
    return scores


def impression_report(groups, cfg: MatcherConfig | None = None) -> ImpressionReport:
    """Pooled intra-identity scores: CDF, fraction at or above threshold, max."""
    cfg = cfg or MatcherConfig()
    scores = intra_group_scores(groups, cfg)
    xs, ys = empirical_cdf(scores)
    arr = np.asarray(scores)
    frac = float((arr >= cfg.threshold).mean()) if arr.size else 0.0
    return ImpressionReport(tuple(scores), xs, ys, frac, int(arr.max()) if arr.size else 0, cfg.threshold)


def inter_group_scores(groups, cfg: MatcherConfig | None = None, max_pairs: int | None = None, seed: int = 0) -> list[int]:
    """Scores between templates of different groups (optionally subsampled)."""
    flat = [(g, t) for g, group in enumerate(groups) for t in group]
    pairs = [(i, j) for i in range(len(flat)) for j in range(i + 1, len(flat)) if flat[i][0] != flat[j][0]]
    if max_pairs is not None and len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[k] for k in keep]
    return [match_score(flat[i][1], flat[j][1], cfg).score for i, j in pairs]


# --------------------------------------------------------------------------- report files


def write_quality_csv(names, report: QualityReport, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "quality"])
            for n, s in zip(names, report.scores):
                w.writerow([n, f"{s:.4f}"])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_histogram_csv(summary: DiversitySummary, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(summary.bin_edges[:-1], summary.bin_edges[1:], summary.histogram):
                w.writerow([int(lo), int(hi), int(c)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_cdf_csv(report: ImpressionReport, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["score", "cdf"])
            for x, y in zip(report.cdf_x, report.cdf_y):
                w.writerow([int(x), f"{y:.6f}"])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ridgediff"
    fig, ax = plt.subplots(figsize=(6, 4))
    return plt, fig, ax


def _save_svg(plt, fig, path):
    try:
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def plot_histogram_svg(summary: DiversitySummary, path, title: str = "Pairwise matcher scores") -> None:
    plt, fig, ax = _svg_figure()
    ax.bar(summary.bin_edges[:-1], summary.histogram, width=5, align="edge")
    ax.set_xlabel("score")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    _save_svg(plt, fig, path)


def plot_cdf_svg(report: ImpressionReport, path, title: str = "Intra-identity score CDF") -> None:
    plt, fig, ax = _svg_figure()
    if report.cdf_x.size:
        ax.step(report.cdf_x, report.cdf_y, where="post")
    ax.axvline(report.threshold, linestyle="--", color="gray")
    ax.set_xlabel("score")
    ax.set_ylabel("CDF")
    ax.set_title(title)
    _save_svg(plt, fig, path)


def write_summary(lines, path) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return path


__all__ = [
    "FEATURE_DIM",
    "THRESHOLD",
    "DiversitySummary",
    "FeatureStats",
    "ImpressionReport",
    "QualityComponents",
    "QualityReport",
    "diversity_report",
    "empirical_cdf",
    "feature_vector",
    "fit_stats",
    "frechet_distance",
    "impression_report",
    "inter_group_scores",
    "quality_components",
    "quality_report",
    "quality_score",
    "summarize_scores",
]
