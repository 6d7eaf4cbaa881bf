"""Bit-exact PPM/PGM raster codecs and the 16-bit disparity encoding.

Color images travel as binary PPM (P6, maxval 255). Disparity maps travel as
binary PGM (P5, maxval 65535) with big-endian samples per the Netpbm standard,
raw = round(256 * disparity), and raw 0 reserved for "invalid". Everything in
here is a pure function over byte buffers.
"""

import logging

import numpy as np

log = logging.getLogger(__name__)


class PnmError(ValueError):
    """Base class for raster parse failures."""


class BadMagicError(PnmError):
    pass


class BadHeaderError(PnmError):
    pass


class BadMaxvalError(PnmError):
    pass


class TruncatedError(PnmError):
    pass


class RawImage:
    """Interleaved 8-bit RGB raster, shape (height, width, 3)."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixel array, got {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1x1")
        self.pixels = np.ascontiguousarray(pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, RawImage) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"RawImage({self.width}x{self.height})"


class DisparityMap:
    """Per-pixel float disparity (full-resolution pixel units) plus validity mask.

    Invalid pixels always carry value 0; valid pixels are non-negative.
    """

    __slots__ = ("values", "valid")

    def __init__(self, values: np.ndarray, valid: np.ndarray):
        values = np.asarray(values, dtype=np.float32)
        valid = np.asarray(valid, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"expected (H, W) disparity array, got {values.shape}")
        if valid.shape != values.shape:
            raise ValueError("validity mask shape must match values")
        if np.any(values[valid] < 0):
            raise ValueError("valid disparities must be non-negative")
        values = values.copy()
        values[~valid] = 0.0
        self.values = values
        self.valid = valid

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __repr__(self):
        return f"DisparityMap({self.width}x{self.height}, {int(self.valid.sum())} valid)"


def _parse_header(data: bytes, magic: bytes):
    """Parse a binary PNM header; returns (width, height, maxval, payload offset)."""
    if data[:2] != magic:
        raise BadMagicError(f"expected {magic!r} magic, got {data[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise BadHeaderError("header ended before width/height/maxval")
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise BadHeaderError(f"unexpected byte {c!r} in header")
    # exactly one whitespace byte separates maxval from the binary payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise BadHeaderError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise BadHeaderError(f"bad dimensions {width}x{height}")
    return width, height, maxval, pos


def decode_ppm(data: bytes) -> RawImage:
    """Decode a binary P6 PPM (maxval 255) into a RawImage."""
    width, height, maxval, pos = _parse_header(data, b"P6")
    if maxval != 255:
        raise BadMaxvalError(f"PPM maxval must be 255, got {maxval}")
    n = 3 * width * height
    payload = data[pos : pos + n]
    if len(payload) < n:
        raise TruncatedError(f"expected {n} sample bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return RawImage(pixels)


def encode_ppm(img: RawImage) -> bytes:
    """Encode a RawImage as binary P6; decode_ppm(encode_ppm(img)) is bit-exact."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def decode_disp16(data: bytes) -> DisparityMap:
    """Decode a 16-bit P5 PGM disparity map (big-endian, raw = 256 * disparity)."""
    width, height, maxval, pos = _parse_header(data, b"P5")
    if maxval != 65535:
        raise BadMaxvalError(f"disparity PGM maxval must be 65535, got {maxval}")
    n = 2 * width * height
    payload = data[pos : pos + n]
    if len(payload) < n:
        raise TruncatedError(f"expected {n} sample bytes, got {len(payload)}")
    raw = np.frombuffer(payload, dtype=">u2").reshape(height, width).copy()
    valid = raw != 0
    values = raw.astype(np.float32) / 256.0
    values[~valid] = 0.0
    return DisparityMap(values, valid)


def encode_disp16(d: DisparityMap) -> bytes:
    """Encode a DisparityMap as 16-bit P5 PGM.

    Valid pixels become round(256 * disparity) clamped to [1, 65535]; clamping
    is silent apart from a log line with the count. Invalid pixels become 0.
    """
    raw = np.rint(d.values.astype(np.float64) * 256.0)
    clamped = int(np.sum(d.valid & ((raw < 1) | (raw > 65535))))
    if clamped:
        log.info("encode_disp16: clamped %d out-of-range valid pixels", clamped)
    raw = np.clip(raw, 1, 65535).astype(np.uint16)
    raw[~d.valid] = 0
    header = f"P5\n{d.width} {d.height}\n65535\n".encode("ascii")
    return header + raw.astype(">u2").tobytes()


def colorize_disparity(d: DisparityMap, max_disp: float) -> RawImage:
    """Map disparities through a linear blue->green->red ramp over [0, max_disp].

    Diagnostic visualization only: invalid pixels are black, 0 is pure blue,
    max_disp and above is pure red, with green at the midpoint.
    """
    if max_disp <= 0:
        raise ValueError("max_disp must be positive")
    t = np.clip(d.values / max_disp, 0.0, 1.0)
    lo = np.clip(2.0 * t, 0.0, 1.0)          # blue -> green half
    hi = np.clip(2.0 * t - 1.0, 0.0, 1.0)    # green -> red half
    r = hi
    g = np.where(t < 0.5, lo, 1.0 - hi)
    b = 1.0 - lo
    rgb = np.stack([r, g, b], axis=-1)
    rgb[~d.valid] = 0.0
    return RawImage(np.rint(rgb * 255.0).astype(np.uint8))
