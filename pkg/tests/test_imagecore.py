import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ridgediff.errors import IoFailure, MalformedHeader, UnsupportedFormat
from ridgediff.imagecore import GrayImage, from_bytes, load_image, resize_bilinear, save_image, to_bytes


def write_raw(path, data: bytes):
    path.write_bytes(data)
    return path


def test_grayimage_rejects_out_of_range():
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ValueError):
        GrayImage(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))


def test_grayimage_is_immutable_and_flat_data():
    img = GrayImage(np.arange(6).reshape(2, 3) / 5)
    assert (img.width, img.height) == (3, 2)
    assert img.data.size == 6
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 0.3


def test_pgm_byte_extremes(tmp_path):
    p = write_raw(tmp_path / "a.pgm", b"P5\n2 1\n255\n" + bytes([0, 255]))
    img = load_image(p)
    assert img.pixels[0, 0] == 0.0
    assert img.pixels[0, 1] == 1.0


def test_pgm_header_comments(tmp_path):
    p = write_raw(tmp_path / "c.pgm", b"P5\n# made by hand\n2 # width\n1\n255\n" + bytes([10, 20]))
    np.testing.assert_array_equal(to_bytes(load_image(p)), [[10, 20]])


@pytest.mark.parametrize(
    "data, exc",
    [
        (b"P6\n1 1\n255\n\x00\x00\x00", UnsupportedFormat),
        (b"P2\n1 1\n255\n0", MalformedHeader),
        (b"P5\n1 1\n65535\n\x00\x00", UnsupportedFormat),
        (b"P5\n0 1\n255\n", MalformedHeader),
        (b"P5\n4 4\n255\n\x00", MalformedHeader),
        (b"P5\n4", MalformedHeader),
    ],
)
def test_pgm_errors(tmp_path, data, exc):
    with pytest.raises(exc):
        load_image(write_raw(tmp_path / "bad.pgm", data))


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        load_image(tmp_path / "nope.pgm")


def test_save_constant_half_is_128(tmp_path):
    p = tmp_path / "h.pgm"
    save_image(GrayImage(np.full((3, 3), 0.5)), p)
    assert p.read_bytes().endswith(bytes([128]) * 9)


def test_save_single_white_pixel(tmp_path):
    p = tmp_path / "w.pgm"
    save_image(GrayImage(np.ones((1, 1))), p)
    assert p.read_bytes() == b"P5\n1 1\n255\n\xff"


@pytest.mark.parametrize("ext", ["pgm", "png"])
def test_round_trip_100_random_images(tmp_path, ext):
    rng = np.random.default_rng(0)
    for k in range(100):
        img = GrayImage(rng.uniform(0, 1, (4, 4)))
        p = tmp_path / f"r{k}.{ext}"
        save_image(img, p)
        back = load_image(p)
        # oracle: quantize to 8 bits independently
        expected = np.floor(img.pixels * 255 + 0.5) / 255
        np.testing.assert_array_equal(back.pixels, expected)
        assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255 + 1e-12


def test_png_color_rejected(tmp_path):
    from PIL import Image

    p = tmp_path / "rgb.png"
    Image.new("RGB", (2, 2)).save(p)
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_png_16bit_rejected(tmp_path):
    from PIL import Image

    p = tmp_path / "deep.png"
    Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(p)
    with pytest.raises(UnsupportedFormat):
        load_image(p)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_bytes_round_trip_exact(raw):
    np.testing.assert_array_equal(to_bytes(from_bytes(raw)), raw)


def test_resize_identity_returns_same_image():
    img = GrayImage(np.random.default_rng(1).uniform(0, 1, (5, 7)))
    assert resize_bilinear(img, 7, 5) == img


@pytest.mark.parametrize("size", [(1, 1), (3, 9), (40, 17)])
def test_resize_constant(size):
    out = resize_bilinear(GrayImage(np.full((6, 6), 0.3)), *size)
    assert out.shape == (size[1], size[0])
    np.testing.assert_allclose(out.pixels, 0.3, atol=1e-15)


def test_checkerboard_to_single_pixel_is_half():
    board = GrayImage(np.array([[0.0, 1.0], [1.0, 0.0]]))
    # the 1x1 sample sits at the center (0.5, 0.5): mean of the four pixels
    assert resize_bilinear(board, 1, 1).pixels[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_resize_matches_scipy_zoom_oracle():
    from scipy import ndimage

    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (8, 8))
    # an exact 2x upsampling with pixel-center alignment equals grid_mode zoom with edge clamp
    ours = resize_bilinear(GrayImage(a), 16, 16).pixels
    ref = ndimage.zoom(a, 2, order=1, mode="nearest", grid_mode=True)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(0, 1)),
    st.integers(1, 20),
    st.integers(1, 20),
)
def test_resize_stays_within_input_range(a, w, h):
    out = resize_bilinear(GrayImage(a), w, h).pixels
    assert out.min() >= a.min() and out.max() <= a.max()


def test_resize_up_down_on_smooth_image_is_close(master64):
    from scipy import ndimage

    smooth = GrayImage(ndimage.gaussian_filter(master64.pixels, 1.5))
    back = resize_bilinear(resize_bilinear(smooth, 128, 128), 64, 64)
    assert np.abs(back.pixels - smooth.pixels).max() < 0.05


def test_resize_rejects_zero_size():
    with pytest.raises(ValueError):
        resize_bilinear(GrayImage(np.zeros((2, 2))), 0, 2)
