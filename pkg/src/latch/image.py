"""Grayscale images, PGM decoding, smoothing and window sampling."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PgmDecodeError(ValueError):
    """Raised for malformed portable graymap data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class OutOfBoundsError(ValueError):
    """Raised when a sampling footprint leaves its source raster."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster, row-major, indexed ``pixels[y, x]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D raster, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        return cls(np.asarray(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


# ---------------------------------------------------------------------------
# PGM

_WS = b" \t\r\n\v\f"


def _header_tokens(buf: bytes, count: int) -> tuple[list[tuple[int, int]], int]:
    """Read `count` integer tokens after the magic; return (value, offset) list
    and the offset just past the last token."""
    pos = 2
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise PgmDecodeError("truncated header", pos)
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        tok = buf[start:pos]
        if not tok.isdigit():
            raise PgmDecodeError(f"bad header token {tok!r}", start)
        out.append((int(tok), start))
    return out, pos


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) or ASCII (P2) portable graymap."""
    buf = bytes(data)
    magic = buf[:2]
    if magic not in (b"P5", b"P2"):
        raise PgmDecodeError(f"bad magic number {magic!r}", 0)
    tokens, pos = _header_tokens(buf, 3)
    (w, w_off), (h, h_off), (maxval, m_off) = tokens
    if w < 1:
        raise PgmDecodeError("width must be >= 1", w_off)
    if h < 1:
        raise PgmDecodeError("height must be >= 1", h_off)
    if not 0 < maxval <= 255:
        raise PgmDecodeError(f"unsupported maxval {maxval}", m_off)
    n = w * h
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(buf) or buf[pos] not in _WS:
            raise PgmDecodeError("missing whitespace after header", pos)
        start = pos + 1
        raw = buf[start:start + n]
        if len(raw) < n:
            raise PgmDecodeError(
                f"truncated data: expected {n} bytes, found {len(raw)}", len(buf))
        px = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        if px.max() > maxval:
            bad = int(np.argmax(px.ravel() > maxval))
            raise PgmDecodeError("sample exceeds maxval", start + bad)
    else:
        values = []
        for m in re.finditer(rb"#[^\r\n]*|[^ \t\r\n\v\f#]+", buf[pos:]):
            tok = m.group()
            if tok.startswith(b"#"):
                continue
            if not tok.isdigit() or int(tok) > maxval:
                raise PgmDecodeError(f"bad sample {tok!r}", pos + m.start())
            values.append(int(tok))
            if len(values) == n:
                break
        if len(values) < n:
            raise PgmDecodeError(
                f"truncated data: expected {n} samples, found {len(values)}", len(buf))
        px = np.array(values, dtype=np.uint8).reshape(h, w)
    return GrayImage(px)


def encode_pgm(img: GrayImage) -> bytes:
    """Encode as binary P5 with maxval 255."""
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def read_image(path) -> GrayImage:
    """Read a PGM file; other formats go through Pillow when it is installed."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P2"):
        return load_pgm(data)
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - Pillow is optional
        raise PgmDecodeError(f"{path}: not a PGM file and Pillow is unavailable", 0)
    with Image.open(path) as im:
        return GrayImage(np.asarray(im.convert("L")))


def write_pgm(path, img: GrayImage) -> None:
    Path(path).write_bytes(encode_pgm(img))


# ---------------------------------------------------------------------------
# smoothing


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at radius ceil(3*sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def correlate_separable(arr: np.ndarray, kx: np.ndarray, ky: np.ndarray | None = None) -> np.ndarray:
    """Float 2-D correlation with a separable kernel and replicated borders.

    Works on the last two axes, so a stack of rasters is filtered in one call.
    """
    if ky is None:
        ky = kx
    out = np.asarray(arr, dtype=np.float64)
    for axis, k in ((-1, kx), (-2, ky)):
        r = len(k) // 2
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            if w != 0.0:
                acc += w * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def smooth_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-smooth uint8 raster(s), rounding back to uint8."""
    k = gaussian_kernel(sigma)
    return np.clip(np.rint(correlate_separable(arr, k)), 0, 255).astype(np.uint8)


def gaussian_smooth(img: GrayImage, sigma: float) -> GrayImage:
    return GrayImage(smooth_array(img.pixels, sigma))


# ---------------------------------------------------------------------------
# windows


def bilinear(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of `px` at float coordinates (pixel centers at integers).

    Coordinates must already lie in [0, w-1] x [0, h-1].
    """
    h, w = px.shape
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    np.clip(x0, 0, w - 1, out=x0)
    np.clip(y0, 0, h - 1, out=y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    f = px.astype(np.float64) if px.dtype != np.float64 else px
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


@dataclass(frozen=True, eq=False)
class Window:
    """A side x side raster resampled around a keypoint.

    Cell (u, v) corresponds to the offset (u - side/2, v - side/2) from the
    keypoint, so offset (0, 0) lives at ``pixels[side//2, side//2]``.
    """

    pixels: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)
    orientation: float = 0.0
    scale: float = 1.0

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_array(cls, arr) -> "Window":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] % 2:
            raise ValueError(f"window must be square with even side, got {arr.shape}")
        return cls(arr.astype(np.uint8))


def window_grid(side: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (du, dv) of every window cell from the window center."""
    d = np.arange(side, dtype=np.float64) - side // 2
    return np.meshgrid(d, d)


def sampling_coords(cx, cy, orientation, scale, side: int):
    """Image coordinates of window cells; leading axes broadcast over keypoints."""
    du, dv = window_grid(side)
    cx, cy, orientation, scale = (np.asarray(a, dtype=np.float64)[..., None, None]
                                  for a in (cx, cy, orientation, scale))
    c, s = np.cos(orientation), np.sin(orientation)
    xs = cx + scale * (c * du - s * dv)
    ys = cy + scale * (s * du + c * dv)
    return xs, ys


def footprint_inside(img: GrayImage, cx, cy, orientation, scale, side: int) -> np.ndarray:
    """Whether each rotated, scaled window footprint stays in the image."""
    lo = -(side // 2)
    hi = side - 1 - side // 2
    corners = np.array([[lo, lo], [hi, lo], [lo, hi], [hi, hi]], dtype=np.float64)
    cx, cy, orientation, scale = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (cx, cy, orientation, scale)))
    c, s = np.cos(orientation)[..., None], np.sin(orientation)[..., None]
    xs = cx[..., None] + scale[..., None] * (c * corners[:, 0] - s * corners[:, 1])
    ys = cy[..., None] + scale[..., None] * (s * corners[:, 0] + c * corners[:, 1])
    eps = 1e-9
    ok = ((xs >= -eps) & (xs <= img.width - 1 + eps)
          & (ys >= -eps) & (ys <= img.height - 1 + eps))
    return ok.all(axis=-1)


def sample_windows(img: GrayImage, cx, cy, orientation, scale, side: int) -> np.ndarray:
    """Vectorized window sampling: returns (n, side, side) uint8.

    Callers check footprints beforehand.
    """
    xs, ys = sampling_coords(cx, cy, orientation, scale, side)
    xs = np.clip(xs, 0, img.width - 1)
    ys = np.clip(ys, 0, img.height - 1)
    vals = bilinear(img.pixels, xs, ys)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8)


def sample_window(img: GrayImage, kp, side: int = 48) -> Window:
    """Resample the side x side window around keypoint `kp`.

    Cell (u, v) is read at ``center + scale * R(orientation) (u - side/2, v - side/2)``.
    """
    if side % 2 or side < 2:
        raise ValueError(f"window side must be even and >= 2, got {side}")
    if not footprint_inside(img, kp.x, kp.y, kp.orientation, kp.scale, side):
        raise OutOfBoundsError(f"window of side {side} around {kp} leaves the {img.width}x{img.height} image")
    px = sample_windows(img, kp.x, kp.y, kp.orientation, kp.scale, side)
    return Window(px, (float(kp.x), float(kp.y)), float(kp.orientation), float(kp.scale))


def patch_ssd(win: Window, center_a: tuple[int, int], center_b: tuple[int, int], k: int) -> int:
    """Sum of squared differences between two k x k patches of a window.

    Centers are (x, y) offsets from the window center.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"patch size must be odd and positive, got {k}")
    c = win.side // 2
    r = k // 2
    slices = []
    for ox, oy in (center_a, center_b):
        x, y = c + ox, c + oy
        if x - r < 0 or y - r < 0 or x + r >= win.side or y + r >= win.side:
            raise OutOfBoundsError(f"{k}x{k} patch at offset ({ox}, {oy}) leaves the {win.side}-px window")
        slices.append(win.pixels[y - r:y + r + 1, x - r:x + r + 1].astype(np.int64))
    d = slices[0] - slices[1]
    return int((d * d).sum())
