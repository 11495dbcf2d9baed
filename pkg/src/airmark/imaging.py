"""Raster types, color conversion, resampling, and PPM/PGM codecs.

Pixels live in memory as normalized floats in [0, 1]; 8-bit values exist
only at the file boundary. All resampling uses the half-pixel-center
convention: output pixel center (x + 0.5) maps to source coordinate
(x + 0.5) * scale, expressed below in pixel-index space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MalformedHeader, TruncatedPayload, ZeroDimension


@dataclass
class ImageRGB:
    """RGB raster, row-major (height, width, 3) float array in [0, 1]."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height, self.width, 3):
            raise DimensionMismatch(
                f"expected {(self.height, self.width, 3)}, got {self.data.shape}"
            )

    @classmethod
    def from_array(cls, data: np.ndarray) -> "ImageRGB":
        h, w, _ = data.shape
        return cls(width=w, height=h, data=data)


@dataclass
class GrayImage:
    """Single-channel luminance raster, (height, width) float array in [0, 1]."""

    width: int
    height: int
    data: np.ndarray

    @classmethod
    def from_array(cls, data: np.ndarray) -> "GrayImage":
        h, w = data.shape
        return cls(width=w, height=h, data=np.asarray(data, dtype=np.float64))


@dataclass
class BinaryMask:
    """Boolean raster, (height, width); True marks marking candidates."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=bool)
        if self.data.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"expected {(self.height, self.width)}, got {self.data.shape}"
            )

    @classmethod
    def from_array(cls, data: np.ndarray) -> "BinaryMask":
        h, w = data.shape
        return cls(width=w, height=h, data=data)

    def foreground_count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class HSV:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""

    h: float
    s: float
    v: float


def _read_header_tokens(buf: bytes, magic: bytes, n_tokens: int) -> tuple[list[int], int]:
    """Parse a PNM header: magic, then n_tokens decimal fields.

    Whitespace separates fields; '#' comments run to end of line. Returns
    the numeric fields and the offset of the first payload byte (one
    whitespace byte after the last field).
    """
    if not buf.startswith(magic):
        raise MalformedHeader(f"expected magic {magic!r}")
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < n_tokens:
        # skip whitespace and comments
        while pos < len(buf):
            c = buf[pos : pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                nl = buf.find(b"\n", pos)
                pos = len(buf) if nl < 0 else nl + 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        token = buf[start:pos]
        if not token.isdigit():
            raise MalformedHeader(f"non-numeric header field {token!r}")
        fields.append(int(token))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise MalformedHeader("missing whitespace byte before payload")
    return fields, pos + 1


def decode_ppm(buf: bytes) -> ImageRGB:
    """Decode a binary P6 PPM (maxval 255) into a normalized image."""
    (w, h, maxval), offset = _read_header_tokens(buf, b"P6", 3)
    if maxval != 255:
        raise MalformedHeader(f"unsupported maxval {maxval}")
    if w < 1 or h < 1:
        raise MalformedHeader(f"bad dimensions {w}x{h}")
    need = w * h * 3
    payload = buf[offset : offset + need]
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return ImageRGB(width=w, height=h, data=data.reshape(h, w, 3))


def encode_ppm(img: ImageRGB) -> bytes:
    """Encode as canonical binary P6: header then round(c*255) bytes."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    payload = np.rint(img.data * 255.0).astype(np.uint8).tobytes()
    return header + payload


def encode_pgm(mask: BinaryMask) -> bytes:
    """Encode a mask as binary P5, foreground 255 / background 0."""
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    payload = np.where(mask.data, 255, 0).astype(np.uint8).tobytes()
    return header + payload


def decode_pgm(buf: bytes) -> BinaryMask:
    """Decode a binary P5 PGM; bytes >= 128 become foreground."""
    (w, h, maxval), offset = _read_header_tokens(buf, b"P5", 3)
    if maxval != 255:
        raise MalformedHeader(f"unsupported maxval {maxval}")
    need = w * h
    payload = buf[offset : offset + need]
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w) >= 128
    return BinaryMask(width=w, height=h, data=data)


def rgb_to_hsv(r: float, g: float, b: float) -> HSV:
    """Standard hexcone RGB -> HSV; achromatic inputs give h = 0, s = 0."""
    v = max(r, g, b)
    c = v - min(r, g, b)
    if c == 0.0:
        return HSV(h=0.0, s=0.0, v=float(v))
    if v == r:
        h = 60.0 * (((g - b) / c) % 6.0)
    elif v == g:
        h = 60.0 * ((b - r) / c + 2.0)
    else:
        h = 60.0 * ((r - g) / c + 4.0)
    return HSV(h=float(h % 360.0), s=float(c / v), v=float(v))


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    """Inverse hexcone conversion."""
    c = v * s
    hp = (h % 360.0) / 60.0
    x = c * (1.0 - abs(hp % 2.0 - 1.0))
    idx = int(hp) % 6
    r1, g1, b1 = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][idx]
    m = v - c
    return (r1 + m, g1 + m, b1 + m)


def hsv_planes(img: ImageRGB) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized hexcone conversion of a whole frame into (h, s, v) planes."""
    r = img.data[:, :, 0]
    g = img.data[:, :, 1]
    b = img.data[:, :, 2]
    v = np.max(img.data, axis=2)
    c = v - np.min(img.data, axis=2)
    safe_c = np.where(c == 0.0, 1.0, c)
    h = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c == 0.0, 0.0, (h * 60.0) % 360.0)
    s = np.where(v == 0.0, 0.0, c / np.where(v == 0.0, 1.0, v))
    return h, s, v


def luminance(img: ImageRGB) -> GrayImage:
    """Rec.601 luminance plane: 0.299 r + 0.587 g + 0.114 b."""
    lum = img.data @ np.array([0.299, 0.587, 0.114])
    return GrayImage.from_array(lum)


def _sample_bilinear(data: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coords, edge-clamped. data is (H, W, C)."""
    h, w = data.shape[:2]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = (1.0 - fx) * data[y0, x0] + fx * data[y0, x1]
    bot = (1.0 - fx) * data[y1, x0] + fx * data[y1, x1]
    return (1.0 - fy) * top + fy * bot


def resize_bilinear(img: ImageRGB, out_w: int, out_h: int) -> ImageRGB:
    """Resize with bilinear interpolation, half-pixel-center mapping."""
    if out_w < 1 or out_h < 1:
        raise ZeroDimension(f"requested {out_w}x{out_h}")
    sx = (np.arange(out_w) + 0.5) * (img.width / out_w) - 0.5
    sy = (np.arange(out_h) + 0.5) * (img.height / out_h) - 0.5
    grid_y, grid_x = np.meshgrid(sy, sx, indexing="ij")
    out = _sample_bilinear(img.data, grid_y, grid_x)
    return ImageRGB(width=out_w, height=out_h, data=np.clip(out, 0.0, 1.0))


def augment(img: ImageRGB, rotation: float, brightness: float) -> ImageRGB:
    """Rotate about the image center, then scale brightness and clamp.

    Rotation resamples bilinearly with edge-clamp fill so corners take the
    nearest border color instead of injecting dark fill. Positive 90 maps
    the left column onto the top row.
    """
    if rotation == 0.0:
        out = img.data
    else:
        theta = np.deg2rad(rotation)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        cy, cx = (img.height - 1) / 2.0, (img.width - 1) / 2.0
        ys, xs = np.meshgrid(np.arange(img.height), np.arange(img.width), indexing="ij")
        dx = xs - cx
        dy = ys - cy
        sx = cx + cos_t * dx + sin_t * dy
        sy = cy - sin_t * dx + cos_t * dy
        out = _sample_bilinear(img.data, sy, sx)
    out = np.clip(out * brightness, 0.0, 1.0)
    return ImageRGB(width=img.width, height=img.height, data=out)
