"""8-bit grayscale images: PGM (P5) I/O and square bilinear rescaling."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, TruncatedFileError, UnsupportedDepthError

NOMINAL_SIDE = 128


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable row-major 8-bit luminance raster."""

    pixels: np.ndarray  # (height, width) uint8, read-only

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) or np.issubdtype(px.dtype, np.floating):
                if px.size and (px.min() < 0 or px.max() > 255):
                    raise InvalidInputError("pixel values must lie in [0, 255]")
                if np.issubdtype(px.dtype, np.floating) and not np.all(px == np.round(px)):
                    raise InvalidInputError("pixel values must be integers")
            else:
                raise InvalidInputError(f"unsupported pixel dtype {px.dtype}")
        px = np.array(px, dtype=np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_bytes(cls, width: int, height: int, data) -> "GrayImage":
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        if buf.size != width * height:
            raise InvalidInputError(f"expected {width * height} pixels, got {buf.size}")
        return cls(buf.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.pixels.size

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def _read_header(data: bytes):
    # magic, then width/height/maxval separated by whitespace with optional comments
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        m = _TOKEN.match(data, pos)
        pos = m.end()
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header: missing separator before raster")
    return fields, pos + 1


def load_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height, maxval), offset = _read_header(data)
    if width < 1 or height < 1:
        raise FormatError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedDepthError(f"only maxval 255 is supported, got {maxval}")
    payload = data[offset:offset + width * height]
    if len(payload) < width * height:
        raise TruncatedFileError(f"{os.fspath(path)}: raster truncated "
                                 f"({len(payload)} of {width * height} bytes)")
    return GrayImage.from_bytes(width, height, payload)


def save_pgm(img: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
        fh.write(img.pixels.tobytes())


def resize_to(img: GrayImage, side: int = NOMINAL_SIDE) -> GrayImage:
    """Bilinear, corner-aligned resample to ``side`` x ``side``.

    Output sample ``i`` reads source coordinate ``i * (n - 1) / (side - 1)``
    along each axis, so the four corners are copied exactly. Non-square
    inputs are stretched anisotropically.
    """
    if side < 2:
        raise InvalidInputError(f"target side must be >= 2, got {side}")
    if img.width < 2 or img.height < 2:
        raise InvalidInputError(f"cannot interpolate a {img.width}x{img.height} image")
    if img.width == side and img.height == side:
        return img

    # weights are rationals over side - 1, so integer arithmetic is exact
    den = side - 1
    src = img.pixels.astype(np.int64)

    def axis_weights(n):
        pos = np.arange(side, dtype=np.int64) * (n - 1)
        lo = np.minimum(pos // den, n - 2)
        return lo, pos - lo * den

    r0, fr = axis_weights(img.height)
    c0, fc = axis_weights(img.width)
    top = src[r0][:, c0] * (den - fc) + src[r0][:, c0 + 1] * fc
    bot = src[r0 + 1][:, c0] * (den - fc) + src[r0 + 1][:, c0 + 1] * fc
    num = top * (den - fr)[:, None] + bot * fr[:, None]
    den2 = den * den
    return GrayImage(((2 * num + den2) // (2 * den2)).astype(np.uint8))
