import itertools

import numpy as np
import pytest

from ridgediff.errors import ParseError
from ridgediff.minutiae import (
    BIFURCATION,
    ENDING,
    Minutia,
    MinutiaeExtractor,
    MinutiaeTemplate,
    crossing_number,
    detect,
    extract,
    extract_template,
    load_template,
    save_template,
    thin,
)


def zhang_suen_oracle(img):
    """Textbook two-subiteration Zhang-Suen thinning, pixel by pixel."""
    a = np.pad(np.asarray(img, dtype=np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            kill = []
            for r in range(1, a.shape[0] - 1):
                for c in range(1, a.shape[1] - 1):
                    if not a[r, c]:
                        continue
                    p2, p3, p4, p5 = a[r - 1, c], a[r - 1, c + 1], a[r, c + 1], a[r + 1, c + 1]
                    p6, p7, p8, p9 = a[r + 1, c], a[r + 1, c - 1], a[r, c - 1], a[r - 1, c - 1]
                    ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
                    b = sum(ring[:8])
                    transitions = sum(ring[i] == 0 and ring[i + 1] == 1 for i in range(8))
                    if not (2 <= b <= 6 and transitions == 1):
                        continue
                    if step == 0 and p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0:
                        kill.append((r, c))
                    if step == 1 and p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0:
                        kill.append((r, c))
            for r, c in kill:
                a[r, c] = 0
            changed |= bool(kill)
        if not changed:
            return a[1:-1, 1:-1].astype(bool)


def test_crossing_number_all_256_neighborhoods():
    # ring order N, NE, E, SE, S, SW, W, NW as (row, col) offsets from the centre
    ring = [(0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0), (0, 0)]
    for bits in itertools.product((0, 1), repeat=8):
        patch = np.zeros((3, 3), dtype=bool)
        patch[1, 1] = True
        for (r, c), v in zip(ring, bits):
            patch[r, c] = bool(v)
        expected = sum(abs(bits[i] - bits[(i + 1) % 8]) for i in range(8)) // 2
        assert crossing_number(patch)[1, 1] == expected, bits


def test_thinning_bar_to_single_line():
    bar = np.zeros((15, 30), dtype=bool)
    bar[6:9, 3:27] = True
    sk = thin(bar)
    assert sk.any()
    # one pixel wide: every column has at most one skeleton pixel
    assert sk.sum(axis=0).max() == 1
    assert not sk[:6].any() and not sk[9:].any()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_thinning_matches_reference_zhang_suen(seed):
    rng = np.random.default_rng(seed)
    from scipy import ndimage

    blob = ndimage.gaussian_filter(rng.random((24, 24)), 2.0) > 0.5
    assert np.array_equal(thin(blob), zhang_suen_oracle(blob))


def test_thinning_is_idempotent():
    rng = np.random.default_rng(7)
    from scipy import ndimage

    blob = ndimage.gaussian_filter(rng.random((40, 40)), 2.5) > 0.5
    sk = thin(blob)
    assert np.array_equal(thin(sk), sk)


def test_line_gives_two_endings():
    sk = np.zeros((40, 40), dtype=bool)
    sk[20, 8:32] = True
    found = detect(sk)
    assert sorted(m.kind for m in found) == [ENDING, ENDING]
    left = min(found, key=lambda m: m.x)
    right = max(found, key=lambda m: m.x)
    # ending angle points away from the ridge body
    assert abs(np.cos(left.angle) - (-1)) < 1e-9
    assert abs(np.cos(right.angle) - 1) < 1e-9


def test_y_junction():
    sk = np.zeros((50, 50), dtype=bool)
    sk[25, 5:26] = True
    for k in range(1, 18):
        sk[25 - k, 25 + k] = True
        sk[25 + k, 25 + k] = True
    found = detect(sk)
    kinds = sorted(m.kind for m in found)
    assert kinds == [BIFURCATION, ENDING, ENDING, ENDING]
    b = next(m for m in found if m.kind == BIFURCATION)
    assert (b.y, b.x) == (25, 25)
    # bifurcation points into the fork
    assert np.cos(b.angle) > 0.9


def test_extract_border_margin():
    sk = np.zeros((40, 40), dtype=bool)
    sk[20, 2:38] = True
    assert len(extract(sk, border_margin=0)) == 2
    assert len(extract(sk, border_margin=5)) == 0


def test_merge_keeps_one_of_close_cluster():
    sk = np.zeros((40, 40), dtype=bool)
    sk[20, 10:30] = True
    sk[21:24, 20] = True  # short spur: bifurcation plus ending 3 px apart
    t = extract(sk, border_margin=0)
    assert len(t) == 3


def test_template_text_round_trip(tmp_path):
    t = MinutiaeTemplate(64, (
        Minutia(10.0, 12.5, 0.3, ENDING),
        Minutia(3.0, 40.0, 5.9, BIFURCATION),
    ))
    assert [m.y for m in t] == [3.0, 10.0]
    path = tmp_path / "t.min"
    save_template(t, path)
    back = load_template(path)
    assert back.source_side == 64
    for a, b in zip(t, back):
        assert (a.x, a.y, a.kind) == (b.x, b.y, b.kind)
        assert a.angle == pytest.approx(b.angle, abs=1e-5)


def test_template_parse_errors():
    with pytest.raises(ParseError):
        MinutiaeTemplate.from_text("1 2 3 E\n")
    with pytest.raises(ParseError):
        MinutiaeTemplate.from_text("# side=64\n1 2 3 Q\n")
    with pytest.raises(ParseError):
        MinutiaeTemplate.from_text("# side=64\n1 x 3 E\n")


def test_minutia_validation():
    with pytest.raises(ValueError):
        Minutia(0, 0, 0, "X")
    assert Minutia(0, 0, -np.pi / 2, ENDING).angle == pytest.approx(1.5 * np.pi)


def test_extract_template_on_master(master128):
    t = extract_template(master128)
    assert 8 <= len(t) <= 80
    assert t == extract_template(master128)


def test_extractor_estimator(master64, noise_image):
    from sklearn.base import clone

    ex = MinutiaeExtractor(border_margin=4.0)
    assert clone(ex).get_params() == {"border_margin": 4.0}
    out = ex.fit_transform([master64, np.ones((64, 64))])
    assert len(out) == 2 and isinstance(out[1], MinutiaeTemplate)


def test_skeleton_subset_of_binary(master64):
    from ridgediff.minutiae import binarize, binarize_and_thin, enhance

    enh = enhance(master64).enhanced
    assert not (binarize_and_thin(enh) & ~binarize(enh)).any()
