"""Grayscale raster type, PGM/PNG file I/O and bilinear resampling."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import IoFailure, MalformedHeader, UnsupportedFormat


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2-D grayscale image with intensities in ``[0, 1]``.

    ``pixels`` is a read-only ``(height, width)`` float64 array; row-major
    order gives the flat ``data`` view.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("GrayImage intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, arr, clip: bool = False) -> "GrayImage":
        arr = np.asarray(arr, dtype=np.float64)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def data(self) -> np.ndarray:
        return self.pixels.ravel()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height}, mean={self.pixels.mean():.3f})"


def as_array(img) -> np.ndarray:
    """Return the pixel array of a GrayImage or validate a raw 2-D array."""
    if isinstance(img, GrayImage):
        return img.pixels
    return GrayImage(img).pixels


def to_bytes(img: GrayImage) -> np.ndarray:
    """Quantize to 8 bits: ``round(i * 255)`` per pixel."""
    return np.rint(as_array(img) * 255.0).astype(np.uint8)


def from_bytes(arr) -> GrayImage:
    return GrayImage(np.asarray(arr, dtype=np.uint8).astype(np.float64) / 255.0)


# --------------------------------------------------------------------------- PGM


def _read_header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeader("truncated PGM header")
    return buf[start:pos], pos


def _decode_pgm(buf: bytes) -> GrayImage:
    magic = buf[:2]
    if magic in (b"P6", b"P3"):
        raise UnsupportedFormat("color PPM files are not supported")
    if magic != b"P5":
        raise MalformedHeader(f"bad magic {magic!r}, expected b'P5'")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedHeader(f"non-integer header field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise UnsupportedFormat("16-bit PGM is not supported")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} is not supported, expected 255")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = buf[pos : pos + width * height]
    if len(raster) != width * height:
        raise MalformedHeader("raster shorter than header dimensions")
    return from_bytes(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def _encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + to_bytes(img).tobytes()


# --------------------------------------------------------------------------- public API


def _infer_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    return "png" if ext == ".png" else "pgm"


def load_image(path) -> GrayImage:
    """Read an 8-bit P5 PGM or 8-bit grayscale PNG as intensities ``v / 255``."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(path)
    return _decode_pgm(buf)


def _decode_png(path) -> GrayImage:
    from PIL import Image

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "1":
                im = im.convert("L")
            elif mode != "L":
                raise UnsupportedFormat(f"PNG mode {mode!r} is not 8-bit grayscale")
            arr = np.asarray(im, dtype=np.uint8)
    except UnsupportedFormat:
        raise
    except OSError as exc:
        raise IoFailure(f"cannot decode {path}: {exc}") from exc
    return from_bytes(arr)


def save_image(img: GrayImage, path, format: str | None = None) -> None:
    """Write ``round(i * 255)`` per pixel as PGM (P5) or PNG."""
    fmt = (format or _infer_format(path)).lower()
    if fmt not in ("pgm", "png"):
        raise ValueError(f"unknown image format {fmt!r}")
    img = img if isinstance(img, GrayImage) else GrayImage(img)
    try:
        if fmt == "pgm":
            with open(path, "wb") as fh:
                fh.write(_encode_pgm(img))
        else:
            from PIL import Image

            Image.fromarray(to_bytes(img), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def resize_bilinear(img, out_w: int, out_h: int) -> GrayImage:
    """Bilinear resampling on pixel centers with clamp-to-edge borders."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    src = as_array(img)
    h, w = src.shape
    if (w, h) == (out_w, out_h):
        return img if isinstance(img, GrayImage) else GrayImage(src)

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    fy = fy[:, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    # convex combinations can still overshoot by an ulp
    return GrayImage(np.clip(out, src.min(), src.max()))
