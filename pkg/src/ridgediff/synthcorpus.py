"""Procedural toy fingerprints: identities, masters, impressions and corpora.

Ridge patterns are grown from seeded noise by repeated oriented band-pass
filtering along an analytic orientation field (arch, loop or whorl).  The
growth leaves ridge endings and bifurcations wherever the noise seeded
competing ridge phases, which gives every identity its own minutiae layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import IoFailure
from .filters import oriented_filter
from .imagecore import GrayImage, save_image

PATTERN_CLASSES = ("arch", "loop", "whorl")
FREQ_BAND = (0.05, 0.15)

_GROWTH_ITERS = 4


@dataclass(frozen=True)
class OrientationField:
    """Ridge orientation in radians, ``[0, pi)``, sampled at block centers.

    Angles follow the image convention used everywhere in the package:
    counter-clockwise from the +x axis with the y axis pointing up.
    """

    theta: np.ndarray
    block: int = 8

    def __post_init__(self):
        theta = np.mod(np.asarray(self.theta, dtype=np.float64), np.pi)
        if theta.ndim != 2 or min(theta.shape) < 1:
            raise ValueError("orientation field must be a non-empty 2-D grid")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def width(self) -> int:
        return self.theta.shape[1]

    @property
    def height(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class IdentityParams:
    """Everything that determines a synthetic finger.

    ``curvature`` bends arch ridges (0 gives straight parallel ridges),
    ``rotation`` turns the whole field and ``turbulence`` is the standard
    deviation (radians) of a smooth seeded perturbation of the orientation
    model.  Turbulence makes ridges converge and diverge, which is where
    endings and bifurcations appear; at 0 the field is the bare analytic model.
    """

    seed: int
    core: tuple[float, float] = (0.5, 0.5)
    ridge_frequency: float = 0.12
    pattern_class: str = "loop"
    curvature: float = 0.6
    rotation: float = 0.0
    delta_offset: tuple[float, float] = field(default=(0.15, -0.75))
    turbulence: float = 0.0

    def __post_init__(self):
        if self.pattern_class not in PATTERN_CLASSES:
            raise ValueError(f"pattern_class must be one of {PATTERN_CLASSES}")
        lo, hi = FREQ_BAND
        if not lo <= self.ridge_frequency <= hi:
            raise ValueError(f"ridge_frequency must lie in [{lo}, {hi}]")
        if not all(0.0 <= c <= 1.0 for c in self.core):
            raise ValueError("core must lie in the unit square")

    @classmethod
    def random(cls, seed: int, freq_range=(0.11, 0.15)) -> "IdentityParams":
        """Draw a full identity from ``seed``."""
        rng = np.random.default_rng(seed)
        pattern = PATTERN_CLASSES[rng.integers(3)]
        core = (float(rng.uniform(0.35, 0.65)), float(rng.uniform(0.35, 0.6)))
        return cls(
            seed=int(seed),
            core=core,
            ridge_frequency=float(rng.uniform(*freq_range)),
            pattern_class=pattern,
            curvature=float(rng.uniform(0.3, 1.0)),
            rotation=float(rng.uniform(-0.35, 0.35)),
            delta_offset=(float(rng.uniform(-0.3, 0.3)), float(rng.uniform(-0.9, -0.6))),
            turbulence=float(rng.uniform(0.4, 0.7)),
        )


# --------------------------------------------------------------------------- orientation


def orientation_map(p: IdentityParams, w: int, h: int, xs=None, ys=None) -> np.ndarray:
    """Ridge orientation at pixel coordinates (defaults to every pixel center)."""
    if xs is None or ys is None:
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # y axis up, origin at the core, lengths in units of the larger side
    scale = float(max(w, h))
    u = (xs - p.core[0] * (w - 1)) / scale
    v = -(ys - p.core[1] * (h - 1)) / scale
    if p.pattern_class == "arch":
        # ridges follow y = c * cos(pi * u) bumps, no singular point
        theta = np.arctan(-p.curvature * np.pi * np.sin(np.pi * u) * np.exp(-2.0 * v**2))
    elif p.pattern_class == "loop":
        du, dv = p.delta_offset
        theta = 0.5 * np.arctan2(v, u) - 0.5 * np.arctan2(v - dv, u - du) + 0.5 * np.arctan2(-dv, -du)
    else:
        # concentric ridges circulating around the core, slightly elliptic
        theta = np.arctan2(v * 1.15, u) + np.pi / 2
    return np.mod(theta + p.rotation, np.pi)


def turbulent_orientation(p: IdentityParams, side: int) -> np.ndarray:
    """Per-pixel orientation of a square render, perturbation included."""
    theta = orientation_map(p, side, side)
    if p.turbulence > 0:
        rng = np.random.default_rng([p.seed, 0x7B])
        noise = ndimage.gaussian_filter(rng.standard_normal((side, side)), 0.09 * side, mode="wrap")
        theta = theta + p.turbulence * noise / noise.std()
    return np.mod(theta, np.pi)


def make_orientation_field(p: IdentityParams, w: int, h: int, block: int = 8) -> OrientationField:
    """Sample the identity's orientation model at block centers."""
    if w < 16 or h < 16:
        raise ValueError("orientation field needs w, h >= 16")
    bx = np.arange(block / 2 - 0.5, w, block)
    by = np.arange(block / 2 - 0.5, h, block)
    ys, xs = np.meshgrid(by, bx, indexing="ij")
    return OrientationField(orientation_map(p, w, h, xs, ys), block=block)


def winding_number(theta_loop) -> float:
    """Net rotation of an orientation sequence around a closed loop, in turns.

    Orientations are axial (period pi), so each step is wrapped to
    ``(-pi/2, pi/2]`` before summing.
    """
    theta = np.asarray(theta_loop, dtype=np.float64)
    steps = np.diff(np.append(theta, theta[0]))
    steps = (steps + np.pi / 2) % np.pi - np.pi / 2
    return float(steps.sum() / (2 * np.pi))


# --------------------------------------------------------------------------- rendering


def finger_mask(side: int, soft: float = 1.5) -> np.ndarray:
    """Soft rounded-square contact region, 1 inside, 0 outside."""
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    c = (side - 1) / 2
    a, b = 0.47 * side, 0.49 * side
    r = (np.abs((xs - c) / a) ** 4 + np.abs((ys - c) / b) ** 4) ** 0.25
    dist = (1.0 - r) * min(a, b)
    return np.clip(dist / soft + 0.5, 0.0, 1.0)


def _grow_ridges(p: IdentityParams, side: int) -> np.ndarray:
    rng = np.random.default_rng([p.seed, 0x5EED])
    theta = turbulent_orientation(p, side)
    g = rng.standard_normal((side, side))
    for _ in range(_GROWTH_ITERS):
        g = oriented_filter(g, theta, p.ridge_frequency)
        g = np.tanh(2.5 * g / (g.std() + 1e-12))
    return g


def render_master(p: IdentityParams, side: int) -> GrayImage:
    """Render the identity's master print: dark ridges on a white background."""
    if side < 32:
        raise ValueError("side must be >= 32")
    g = _grow_ridges(p, side)
    ridge = 0.5 - 0.42 * np.tanh(2.0 * g)
    mask = finger_mask(side)
    img = mask * ridge + (1 - mask)
    rng = np.random.default_rng([p.seed, 0x0015E])
    img = img + 0.015 * rng.standard_normal(img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


@dataclass(frozen=True)
class WarpConfig:
    max_rotation_deg: float = 10.0
    max_shift_frac: float = 0.05
    max_contrast: float = 0.2
    max_noise: float = 0.05


def render_impression(p: IdentityParams, impression_seed: int, side: int, warp: WarpConfig | None = None) -> GrayImage:
    """One acquisition of ``p``: rigidly moved, contrast-scaled, noisy master."""
    warp = warp or WarpConfig()
    master = render_master(p, side).pixels
    rng = np.random.default_rng([p.seed, int(impression_seed)])
    angle = np.deg2rad(rng.uniform(-warp.max_rotation_deg, warp.max_rotation_deg))
    shift = rng.uniform(-warp.max_shift_frac, warp.max_shift_frac, size=2) * side
    contrast = 1.0 + rng.uniform(-warp.max_contrast, warp.max_contrast)
    noise = rng.uniform(0.0, warp.max_noise)

    c = (side - 1) / 2.0
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    # affine_transform maps output coords to input coords: in = R^T (out - c - shift) + c
    matrix = rot.T
    offset = np.array([c, c]) - matrix @ (np.array([c, c]) + shift[::-1])
    moved = ndimage.affine_transform(master, matrix, offset=offset, order=1, mode="constant", cval=1.0)
    img = 1.0 - contrast * (1.0 - moved)
    img = img + noise * rng.standard_normal(img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


# --------------------------------------------------------------------------- corpus


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    identity_id: int
    impression_id: int
    seed: int


def corpus_seeds(n_ids: int, n_impr: int, seed: int) -> list[tuple[int, list[int]]]:
    """Identity seeds and their impression seeds, all derived from ``seed``."""
    ss = np.random.SeedSequence(int(seed))
    out = []
    for child in ss.spawn(n_ids):
        id_seed, impr_ss = child.generate_state(1, dtype=np.uint64)[0], child.spawn(n_impr)
        out.append((int(id_seed), [int(c.generate_state(1, dtype=np.uint64)[0]) for c in impr_ss]))
    return out


def gen_corpus(out_dir, n_ids: int, n_impr: int, side: int = 64, seed: int = 0, warp: WarpConfig | None = None) -> list[CorpusEntry]:
    """Write ``n_ids * n_impr`` impressions plus ``manifest.tsv`` to ``out_dir``.

    Files are named ``id{I}_impr{J}.pgm``; the manifest lists them in
    identity-major order.
    """
    if n_ids < 1 or n_impr < 1:
        raise ValueError("n_ids and n_impr must be >= 1")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    entries = []
    for i, (id_seed, impr_seeds) in enumerate(corpus_seeds(n_ids, n_impr, seed)):
        params = IdentityParams.random(id_seed)
        for j, s in enumerate(impr_seeds):
            name = f"id{i}_impr{j}.pgm"
            save_image(render_impression(params, s, side, warp), os.path.join(out_dir, name), "pgm")
            entries.append(CorpusEntry(name, i, j, s))
    write_manifest(entries, os.path.join(out_dir, "manifest.tsv"))
    return entries


def write_manifest(entries, path) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("path\tidentity_id\timpression_id\tseed\n")
            for e in entries:
                fh.write(f"{e.path}\t{e.identity_id}\t{e.impression_id}\t{e.seed}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_manifest(path) -> list[CorpusEntry]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        p, i, j, s = line.split("\t")
        entries.append(CorpusEntry(p, int(i), int(j), int(s)))
    return entries
