"""Minutiae extraction: enhancement, binarization, thinning, crossing numbers.

Angles are radians in ``[0, 2*pi)``, counter-clockwise from +x with the y
axis pointing up.  An ending points out of its ridge, past the termination;
a bifurcation points into the valley between its two forks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import FlatImage, IoFailure, ParseError
from .filters import block_sum, oriented_filter, structure_tensor_orientation, tensor_to_orientation, gradients
from .imagecore import GrayImage, as_array
from .synthcorpus import OrientationField

ENDING = "E"
BIFURCATION = "B"

BLOCK = 16
MERGE_RADIUS = 6.0
BORDER_MARGIN = 10.0
FACING_DISTANCE = 8.0
TRACE_LENGTH = 7


@dataclass(frozen=True, order=True)
class Minutia:
    y: float
    x: float
    angle: float = field(compare=False)
    kind: str = field(compare=False)

    def __post_init__(self):
        if self.kind not in (ENDING, BIFURCATION):
            raise ValueError(f"kind must be 'E' or 'B', got {self.kind!r}")
        object.__setattr__(self, "angle", float(np.mod(self.angle, 2 * np.pi)))


@dataclass(frozen=True)
class MinutiaeTemplate:
    """Canonical (y, x)-sorted minutiae of one print."""

    source_side: int
    minutiae: tuple[Minutia, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "minutiae", tuple(sorted(self.minutiae)))

    def __len__(self):
        return len(self.minutiae)

    def __iter__(self):
        return iter(self.minutiae)

    def as_arrays(self):
        """``(xy, angles, kinds)`` arrays for vectorized geometry."""
        if not self.minutiae:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype="<U1")
        xy = np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)
        ang = np.array([m.angle for m in self.minutiae])
        kinds = np.array([m.kind for m in self.minutiae])
        return xy, ang, kinds

    def to_text(self) -> str:
        lines = [f"# side={self.source_side}"]
        for m in self.minutiae:
            lines.append(f"{_fmt(m.x)} {_fmt(m.y)} {np.degrees(m.angle):.4f} {m.kind}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MinutiaeTemplate":
        side = None
        found = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("side="):
                    side = int(line[1:].strip()[5:])
                continue
            parts = line.split()
            if len(parts) != 4 or parts[3] not in (ENDING, BIFURCATION):
                raise ParseError(f"bad minutia line {raw!r}", lineno)
            try:
                x, y, deg = float(parts[0]), float(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"bad number in {raw!r}", lineno) from None
            found.append(Minutia(y=y, x=x, angle=np.radians(deg), kind=parts[3]))
        if side is None:
            raise ParseError("missing '# side=' header", 1)
        return cls(side, tuple(found))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.4f}"


def save_template(t: MinutiaeTemplate, path) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(t.to_text())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_template(path) -> MinutiaeTemplate:
    try:
        with open(path) as fh:
            return MinutiaeTemplate.from_text(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------- enhancement


@dataclass(frozen=True)
class Enhancement:
    """Output of :func:`enhance`.

    ``theta`` and ``coherence`` are pixel-wise; ``orientation`` and
    ``frequency_map`` are per 16x16 block; ``mask`` marks the usable
    ridge region.
    """

    enhanced: GrayImage
    orientation: OrientationField
    frequency_map: np.ndarray
    theta: np.ndarray
    coherence: np.ndarray
    mask: np.ndarray

    def __iter__(self):
        return iter((self.enhanced, self.orientation, self.frequency_map))


def normalize(a: np.ndarray, mean0: float = 0.5, var0: float = 0.1) -> np.ndarray:
    var = a.var()
    if var < 1e-6:
        raise FlatImage(f"image variance {var:.2e} is below 1e-6")
    return mean0 + (a - a.mean()) * np.sqrt(var0 / var)


def block_orientation(img: np.ndarray, block: int = BLOCK) -> OrientationField:
    """Least-squares orientation per block from summed gradient products."""
    gx, gy = gradients(img)
    theta, _ = tensor_to_orientation(block_sum(gx * gx, block), block_sum(gy * gy, block), block_sum(gx * gy, block))
    return OrientationField(theta, block=block)


def ridge_frequency_map(img: np.ndarray, theta: np.ndarray, block: int = BLOCK, band=(0.04, 0.25)) -> np.ndarray:
    """Ridge frequency per block from the x-signature across the ridges.

    Pixels in a ``2*block`` long window normal to the local ridge are
    averaged along the ridge; the signature's spectral peak inside ``band``
    is the block frequency.  Blocks without a clear peak get NaN.
    """
    h, w = img.shape
    nby, nbx = -(-h // block), -(-w // block)
    across = np.arange(2 * block) - block + 0.5
    along = np.arange(block) - block / 2 + 0.5
    nfft = 256
    freqs = np.fft.rfftfreq(nfft)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    out = np.full((nby, nbx), np.nan)
    for by in range(nby):
        for bx in range(nbx):
            cy = min(by * block + block / 2 - 0.5, h - 1)
            cx = min(bx * block + block / 2 - 0.5, w - 1)
            th = theta[int(round(cy)), int(round(cx))]
            # along the ridge: (cos, -sin) in (col,row); across: (sin, cos)
            cols = cx + across[:, None] * np.sin(th) + along[None, :] * np.cos(th)
            rows = cy + across[:, None] * np.cos(th) - along[None, :] * np.sin(th)
            sig = ndimage.map_coordinates(img, [rows, cols], order=1, mode="reflect").mean(axis=1)
            sig = (sig - sig.mean()) * np.hanning(sig.size)
            if sig.std() < 1e-6:
                continue
            power = np.abs(np.fft.rfft(sig, nfft)) ** 2
            band_power = power[in_band]
            k = int(np.argmax(band_power))
            if band_power[k] > 0.3 * power[1:].max():
                out[by, bx] = freqs[in_band][k]
    return out


def foreground_mask(norm: np.ndarray, coherence: np.ndarray, min_coherence: float = 0.3) -> np.ndarray:
    """Ridge region: locally varying and coherently oriented pixels."""
    local_mean = ndimage.uniform_filter(norm, BLOCK, mode="nearest")
    local_var = ndimage.uniform_filter(norm**2, BLOCK, mode="nearest") - local_mean**2
    coh = ndimage.uniform_filter(coherence, BLOCK // 2, mode="nearest")
    mask = (local_var > 0.02) & (coh > min_coherence)
    mask = ndimage.binary_opening(mask, np.ones((5, 5)))
    mask = ndimage.binary_closing(mask, np.ones((9, 9)), border_value=1)
    return ndimage.binary_fill_holes(mask)


def enhance(img, block: int = BLOCK) -> Enhancement:
    """Normalize, estimate orientation/frequency, and Gabor-filter a print.

    Raises
    ------
    FlatImage
        If the global variance is below ``1e-6``.
    """
    a = as_array(img)
    norm = normalize(a)
    theta, coherence = structure_tensor_orientation(norm, sigma=3.0)
    freq_map = ridge_frequency_map(norm, theta, block)
    mask = foreground_mask(norm, coherence)

    valid = freq_map[np.isfinite(freq_map)]
    freq = float(np.median(valid)) if valid.size else 0.1
    freq = float(np.clip(freq, 0.05, 0.2))
    response = oriented_filter(norm - norm.mean(), theta, freq)
    scale = response[mask].std() if mask.any() else response.std()
    enhanced = np.clip(0.5 + 0.25 * response / max(scale, 1e-12), 0.0, 1.0)
    enhanced = np.where(mask, enhanced, 1.0)
    return Enhancement(
        enhanced=GrayImage(enhanced),
        orientation=block_orientation(norm, block),
        frequency_map=freq_map,
        theta=theta,
        coherence=coherence,
        mask=mask,
    )


# --------------------------------------------------------------------------- skeleton


def binarize(enhanced, block: int = BLOCK) -> np.ndarray:
    """Ridge pixels: darker than the mean of their ``block x block`` window."""
    a = as_array(enhanced)
    local = ndimage.uniform_filter(a, block, mode="nearest")
    return a < local - 1e-9


def thin(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide skeleton.

    Both subiterations are evaluated in parallel over the whole image and
    repeated until neither removes a pixel.
    """
    a = np.asarray(binary, dtype=bool).copy()
    while True:
        changed = False
        for step in (0, 1):
            ring = neighbor_stack(a).astype(np.int8)
            p2, p4, p6, p8 = ring[0], ring[2], ring[4], ring[6]
            count = ring.sum(axis=0)
            transitions = ((ring == 0) & (np.roll(ring, -1, axis=0) == 1)).sum(axis=0)
            if step == 0:
                side = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                side = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            kill = a & (count >= 2) & (count <= 6) & (transitions == 1) & side
            if kill.any():
                a &= ~kill
                changed = True
        if not changed:
            return a


def binarize_and_thin(enhanced, block: int = BLOCK) -> np.ndarray:
    return thin(binarize(enhanced, block))


# --------------------------------------------------------------------------- crossing number

# ring order: N, NE, E, SE, S, SW, W, NW as (drow, dcol)
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def neighbor_stack(skel: np.ndarray) -> np.ndarray:
    """``(8, H, W)`` ring neighbors of every pixel, zero outside the image."""
    p = np.pad(skel.astype(np.uint8), 1)
    h, w = skel.shape
    return np.stack([p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _RING])


def crossing_number(skel: np.ndarray) -> np.ndarray:
    """``CN = 1/2 * sum |p_i - p_{i+1}|`` around the 8-ring, per pixel."""
    ring = neighbor_stack(skel).astype(np.int16)
    return np.abs(ring - np.roll(ring, -1, axis=0)).sum(axis=0) // 2


def _branch_starts(skel, r, c):
    """One ring pixel per run of consecutive skeleton neighbors."""
    h, w = skel.shape
    vals = []
    for dr, dc in _RING:
        rr, cc = r + dr, c + dc
        vals.append(bool(0 <= rr < h and 0 <= cc < w and skel[rr, cc]))
    starts = []
    for i in range(8):
        if vals[i] and not vals[i - 1]:
            run = [i]
            j = (i + 1) % 8
            while vals[j] and j != i:
                run.append(j)
                j = (j + 1) % 8
            # prefer the 4-connected member of the run
            best = min(run, key=lambda k: (k % 2, k))
            starts.append((r + _RING[best][0], c + _RING[best][1]))
    return starts


def _trace(skel, start, origin, length=TRACE_LENGTH):
    h, w = skel.shape
    visited = {origin, start}
    cur = start
    for _ in range(length - 1):
        nxt = None
        for dr, dc in sorted(_RING, key=lambda d: abs(d[0]) + abs(d[1])):
            rr, cc = cur[0] + dr, cur[1] + dc
            if 0 <= rr < h and 0 <= cc < w and skel[rr, cc] and (rr, cc) not in visited:
                if any(abs(rr - v[0]) <= 1 and abs(cc - v[1]) <= 1 for v in (origin,)) and (rr, cc) != start:
                    continue
                nxt = (rr, cc)
                break
        if nxt is None:
            break
        visited.add(nxt)
        cur = nxt
    return cur


def _direction(frm, to) -> float:
    return float(np.arctan2(-(to[0] - frm[0]), to[1] - frm[1]))


def _circ_diff(a, b):
    return (a - b + np.pi) % (2 * np.pi) - np.pi


def _resolve(theta_local, traced):
    """Pick ``theta`` or ``theta + pi``, whichever agrees with ``traced``."""
    if theta_local is None:
        return traced
    cand = (theta_local, theta_local + np.pi)
    return min(cand, key=lambda a: abs(_circ_diff(a, traced)))


def _orientation_at(orientation, r, c):
    if orientation is None:
        return None
    if isinstance(orientation, OrientationField):
        b = orientation.block
        return float(orientation.theta[min(r // b, orientation.height - 1), min(c // b, orientation.width - 1)])
    return float(np.asarray(orientation)[r, c])


def detect(skel: np.ndarray, orientation=None) -> list[Minutia]:
    """Raw crossing-number minutiae with traced, orientation-resolved angles."""
    skel = np.asarray(skel, dtype=bool)
    cn = crossing_number(skel)
    found = []
    rows, cols = np.nonzero(skel & ((cn == 1) | (cn == 3)))
    for r, c in zip(rows.tolist(), cols.tolist()):
        starts = _branch_starts(skel, r, c)
        ends = [_trace(skel, s, (r, c)) for s in starts]
        dirs = [_direction((r, c), e) for e in ends]
        th = _orientation_at(orientation, r, c)
        if cn[r, c] == 1:
            angle = _resolve(th, dirs[0] + np.pi)
            kind = ENDING
        else:
            if len(dirs) < 3:
                continue
            pairs = [(abs(_circ_diff(dirs[i], dirs[j])), i, j) for i in range(3) for j in range(i + 1, 3)]
            _, i, j = min(pairs)
            bis = dirs[i] + _circ_diff(dirs[j], dirs[i]) / 2
            angle = _resolve(th, bis)
            kind = BIFURCATION
        found.append(Minutia(y=float(r), x=float(c), angle=angle, kind=kind))
    return found


def _drop_facing_endings(ms: list[Minutia], max_dist: float) -> list[Minutia]:
    drop = set()
    ends = [i for i, m in enumerate(ms) if m.kind == ENDING]
    for a in range(len(ends)):
        for b in range(a + 1, len(ends)):
            i, j = ends[a], ends[b]
            mi, mj = ms[i], ms[j]
            d = np.hypot(mj.x - mi.x, mj.y - mi.y)
            if d > max_dist or d == 0:
                continue
            toward = _direction((mi.y, mi.x), (mj.y, mj.x))
            if abs(_circ_diff(mi.angle, toward)) < np.pi / 4 and abs(_circ_diff(mj.angle, toward + np.pi)) < np.pi / 4:
                drop.update((i, j))
    return [m for k, m in enumerate(ms) if k not in drop]


def _merge_close(ms: list[Minutia], radius: float) -> list[Minutia]:
    if len(ms) < 2:
        return ms
    xy = np.array([(m.x, m.y) for m in ms])
    d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    n_comp, labels = _components(d < radius)
    kept = []
    for k in range(n_comp):
        idx = np.flatnonzero(labels == k)
        if idx.size == 1:
            kept.append(ms[idx[0]])
            continue
        centroid = xy[idx].mean(axis=0)
        dist = np.hypot(*(xy[idx] - centroid).T)
        # ties resolve to canonical (y, x) order since ms is sorted
        kept.append(ms[idx[int(np.argmin(np.round(dist, 9)))]])
    return sorted(kept)


def _components(adj: np.ndarray):
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    return connected_components(csr_matrix(adj), directed=False)


def extract(
    skeleton,
    orientation=None,
    mask: np.ndarray | None = None,
    border_margin: float = BORDER_MARGIN,
    merge_radius: float = MERGE_RADIUS,
    facing_distance: float = FACING_DISTANCE,
) -> MinutiaeTemplate:
    """Crossing-number minutiae of a skeleton, pruned.

    Pruning removes facing ending pairs (broken ridges), merges minutiae
    closer than ``merge_radius`` and finally drops anything within
    ``border_margin`` of the ink boundary.  ``mask=None`` treats the whole
    image as ink, so only the image border counts; ``border_margin=0``
    disables the boundary step.
    """
    skel = np.asarray(skeleton, dtype=bool)
    ms = sorted(detect(skel, orientation))
    ms = _drop_facing_endings(ms, facing_distance)
    ms = _merge_close(ms, merge_radius)
    if border_margin > 0 and ms:
        region = np.ones_like(skel) if mask is None else np.asarray(mask, dtype=bool)
        dist = ndimage.distance_transform_edt(np.pad(region, 1))[1:-1, 1:-1]
        ms = [m for m in ms if dist[int(m.y), int(m.x)] > border_margin]
    return MinutiaeTemplate(max(skel.shape), tuple(ms))


def extract_template(img, border_margin: float = BORDER_MARGIN) -> MinutiaeTemplate:
    """Full pipeline: enhance, binarize, thin, detect and prune."""
    enh = enhance(img)
    inner = ndimage.binary_erosion(enh.mask, np.ones((5, 5)), border_value=1)
    skel = thin(binarize(enh.enhanced) & inner)
    return extract(skel, enh.theta, enh.mask, border_margin=border_margin)


class MinutiaeExtractor(TransformerMixin, BaseEstimator):
    """Map fingerprint images to minutiae templates.

    Images whose enhancement fails (flat input) give empty templates.
    """

    def __init__(self, border_margin: float = BORDER_MARGIN):
        self.border_margin = border_margin

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        from .validation import check_images

        out = []
        for img in check_images(X, min_count=0):
            try:
                out.append(extract_template(img, self.border_margin))
            except FlatImage:
                out.append(MinutiaeTemplate(max(as_array(img).shape)))
        return out
