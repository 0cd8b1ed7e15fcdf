"""Rotation/translation-invariant minutiae matching over pair tables.

Each template is summarized by the rigid-motion invariants of its minutia
pairs: the pair distance and the angle of each minutia measured against
the segment joining them.  Two prints are compared by finding pair-table
entries with matching invariants and clustering them around a common
rigid motion; the score is the number of compatible entry pairs in the
largest consistent cluster.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import IoFailure
from .minutiae import MinutiaeTemplate

D_MAX = 75.0
DIST_TOL = 6.0
ANGLE_TOL = np.deg2rad(11.25)
ROTATION_SPREAD = np.deg2rad(11.25)
POSITION_TOL = 8.0
THRESHOLD = 40


def wrap(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2 * np.pi)


@dataclass(frozen=True)
class PairTable:
    """Arrays with one row per unordered minutia pair ``i < j`` within ``d_max``.

    ``phi`` is the direction of the segment from ``i`` to ``j``; it is not
    rigid-invariant and is only kept to recover the rotation of a match.
    """

    d: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    i: np.ndarray
    j: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return self.d.size

    @property
    def entries(self):
        return list(zip(self.d.tolist(), self.beta1.tolist(), self.beta2.tolist(), self.i.tolist(), self.j.tolist()))


def build_pair_table(t: MinutiaeTemplate, d_max: float = D_MAX) -> PairTable:
    xy, ang, _ = t.as_arrays()
    n = len(ang)
    if n < 2:
        empty = np.zeros(0)
        return PairTable(empty, empty, empty, empty.astype(int), empty.astype(int), empty)
    i, j = np.triu_indices(n, 1)
    dx = xy[j, 0] - xy[i, 0]
    dy = -(xy[j, 1] - xy[i, 1])
    d = np.hypot(dx, dy)
    keep = d <= d_max
    i, j, dx, dy, d = i[keep], j[keep], dx[keep], dy[keep], d[keep]
    phi = np.arctan2(dy, dx)
    return PairTable(d, wrap(ang[i] - phi), wrap(ang[j] - phi), i, j, phi)


@dataclass(frozen=True)
class MatchResult:
    score: int
    matched_pairs: int
    same_identity: bool


@dataclass(frozen=True)
class MatcherConfig:
    d_max: float = D_MAX
    dist_tol: float = DIST_TOL
    angle_tol: float = ANGLE_TOL
    rotation_spread: float = ROTATION_SPREAD
    position_tol: float = POSITION_TOL
    threshold: int = THRESHOLD


def _compatible(ta: PairTable, tb: PairTable, cfg: MatcherConfig):
    """All (entry of a, entry of b, orientation) triples with matching invariants.

    Entry ``(k, l)`` of b can be read in either direction; reversing it
    swaps the minutiae and turns the segment by pi.
    """
    if len(ta) == 0 or len(tb) == 0:
        return None
    dd = np.abs(ta.d[:, None] - tb.d[None, :]) <= cfg.dist_tol
    ea, eb = np.nonzero(dd)
    if ea.size == 0:
        return None
    b1a, b2a = ta.beta1[ea], ta.beta2[ea]
    fwd = (np.abs(wrap(b1a - tb.beta1[eb])) <= cfg.angle_tol) & (np.abs(wrap(b2a - tb.beta2[eb])) <= cfg.angle_tol)
    rb1, rb2 = wrap(tb.beta2[eb] - np.pi), wrap(tb.beta1[eb] - np.pi)
    rev = (np.abs(wrap(b1a - rb1)) <= cfg.angle_tol) & (np.abs(wrap(b2a - rb2)) <= cfg.angle_tol)
    ea_all = np.concatenate([ea[fwd], ea[rev]])
    eb_all = np.concatenate([eb[fwd], eb[rev]])
    flip = np.concatenate([np.zeros(fwd.sum(), bool), np.ones(rev.sum(), bool)])
    if ea_all.size == 0:
        return None
    pa_i, pa_j = ta.i[ea_all], ta.j[ea_all]
    pb_k = np.where(flip, tb.j[eb_all], tb.i[eb_all])
    pb_l = np.where(flip, tb.i[eb_all], tb.j[eb_all])
    phib = np.where(flip, tb.phi[eb_all] + np.pi, tb.phi[eb_all])
    rot = wrap(phib - ta.phi[ea_all])
    return pa_i, pa_j, pb_k, pb_l, rot


def _cluster_sizes(xya, xyb, comp, cfg: MatcherConfig):
    """Size of the consistent cluster grown around every compatible pair."""
    pa_i, pa_j, pb_k, pb_l, rot = comp
    m = rot.size
    # rigid motion of each seed: rotate by rot about the midpoint of a's segment
    mid_a = 0.5 * (xya[pa_i] + xya[pa_j])
    mid_b = 0.5 * (xyb[pb_k] + xyb[pb_l])
    best = np.zeros(m, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(m, 1))
    # y axis is flipped in pixel coordinates, so a CCW rotation is (c, s; -s, c)
    pts_a = xya[pa_i]
    pts_b = xyb[pb_k]
    for s0 in range(0, m, chunk):
        s = slice(s0, min(m, s0 + chunk))
        c, sn = np.cos(rot[s]), np.sin(rot[s])
        rel = pts_a[None, :, :] - mid_a[s, None, :]
        px = c[:, None] * rel[..., 0] + sn[:, None] * rel[..., 1] + mid_b[s, None, 0]
        py = -sn[:, None] * rel[..., 0] + c[:, None] * rel[..., 1] + mid_b[s, None, 1]
        err = np.hypot(px - pts_b[None, :, 0], py - pts_b[None, :, 1])
        rot_ok = np.abs(wrap(rot[None, :] - rot[s, None])) <= cfg.rotation_spread / 2
        best[s] = ((err <= cfg.position_tol) & rot_ok).sum(axis=1)
    return best


def _canonical_key(t: MinutiaeTemplate):
    return (len(t), t.source_side, tuple((m.y, m.x, m.angle, m.kind) for m in t.minutiae))


def match_score(a: MinutiaeTemplate, b: MinutiaeTemplate, cfg: MatcherConfig | None = None) -> MatchResult:
    """Largest rigidly consistent cluster of compatible pair-table entries."""
    cfg = cfg or MatcherConfig()
    if len(a) < 2 or len(b) < 2:
        return MatchResult(0, 0, cfg.threshold <= 0)
    # evaluate in a fixed order so score(a, b) == score(b, a) bit for bit
    if _canonical_key(b) < _canonical_key(a):
        a, b = b, a
    comp = _compatible(build_pair_table(a, cfg.d_max), build_pair_table(b, cfg.d_max), cfg)
    if comp is None:
        return MatchResult(0, 0, cfg.threshold <= 0)
    xya, _, _ = a.as_arrays()
    xyb, _, _ = b.as_arrays()
    sizes = _cluster_sizes(xya, xyb, comp, cfg)
    seed = int(np.argmax(sizes))
    score = int(sizes[seed])
    matched = _matched_minutiae(xya, xyb, comp, seed, cfg)
    return MatchResult(score, matched, score >= cfg.threshold)


def _matched_minutiae(xya, xyb, comp, seed, cfg) -> int:
    pa_i, pa_j, pb_k, pb_l, rot = comp
    c, s = np.cos(rot[seed]), np.sin(rot[seed])
    mid_a = 0.5 * (xya[pa_i[seed]] + xya[pa_j[seed]])
    mid_b = 0.5 * (xyb[pb_k[seed]] + xyb[pb_l[seed]])
    rel = xya[pa_i] - mid_a
    px = c * rel[:, 0] + s * rel[:, 1] + mid_b[0]
    py = -s * rel[:, 0] + c * rel[:, 1] + mid_b[1]
    ok = (np.hypot(px - xyb[pb_k, 0], py - xyb[pb_k, 1]) <= cfg.position_tol) & (
        np.abs(wrap(rot - rot[seed])) <= cfg.rotation_spread / 2
    )
    pairs = set(zip(pa_i[ok].tolist(), pb_k[ok].tolist())) | set(zip(pa_j[ok].tolist(), pb_l[ok].tolist()))
    return min(len({p[0] for p in pairs}), len({p[1] for p in pairs}))


def pairwise_scores(templates, omit_zero: bool = False, cfg: MatcherConfig | None = None) -> list[tuple[int, int, int]]:
    """Scores of every unordered pair as ``(index_a, index_b, score)``, pair-index sorted."""
    if len(templates) < 2:
        raise ValueError("pairwise_scores needs at least 2 templates")
    out = []
    n = len(templates)
    for i in range(n):
        for j in range(i + 1, n):
            s = match_score(templates[i], templates[j], cfg).score
            if omit_zero and s == 0:
                continue
            out.append((i, j, s))
    return out


def write_scores_csv(rows, path, names=None) -> None:
    """Write ``id_a,id_b,score`` rows; ``names`` maps indices to identifiers."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id_a", "id_b", "score"])
            for i, j, s in rows:
                w.writerow([names[i] if names else i, names[j] if names else j, s])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_scores_csv(path) -> list[tuple[str, str, int]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return [(r["id_a"], r["id_b"], int(r["score"])) for r in rows]


class PairTableMatcher(BaseEstimator):
    """Estimator-style wrapper holding the matcher tolerances."""

    def __init__(self, d_max=D_MAX, dist_tol=DIST_TOL, angle_tol=ANGLE_TOL,
                 rotation_spread=ROTATION_SPREAD, position_tol=POSITION_TOL, threshold=THRESHOLD):
        self.d_max = d_max
        self.dist_tol = dist_tol
        self.angle_tol = angle_tol
        self.rotation_spread = rotation_spread
        self.position_tol = position_tol
        self.threshold = threshold

    def _config(self):
        return MatcherConfig(self.d_max, self.dist_tol, self.angle_tol, self.rotation_spread,
                             self.position_tol, self.threshold)

    def fit(self, X=None, y=None):
        return self

    def score_pair(self, a, b) -> MatchResult:
        return match_score(a, b, self._config())

    def pairwise(self, templates, omit_zero=False):
        from .validation import check_templates

        return pairwise_scores(check_templates(templates, 2), omit_zero, self._config())
