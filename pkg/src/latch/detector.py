"""Multi-scale Harris corners with intensity-centroid orientation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latch.image import GrayImage, OutOfBoundsError, bilinear, correlate_separable, gaussian_kernel

TWO_PI = 2.0 * math.pi

PYRAMID_FACTOR = 1.5
BORDER = 31


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    orientation: float = 0.0
    scale: float = 1.0
    response: float = 0.0

    def with_orientation(self, theta: float) -> "Keypoint":
        return Keypoint(self.x, self.y, normalize_angle(theta), self.scale, self.response)


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, TWO_PI)
    if t < 0:
        t += TWO_PI
    # fmod of values a hair below 2*pi can round up to exactly 2*pi
    return 0.0 if t >= TWO_PI else t


_SOBEL_D = np.array([-1.0, 0.0, 1.0])
_SOBEL_S = np.array([1.0, 2.0, 1.0])


def harris_response(px: np.ndarray, k_harris: float = 0.04, sigma: float = 1.5) -> np.ndarray:
    """Harris corner measure det(M) - k tr(M)^2 for every pixel."""
    f = px.astype(np.float64)
    ix = correlate_separable(f, _SOBEL_D, _SOBEL_S) / 8.0
    iy = correlate_separable(f, _SOBEL_S, _SOBEL_D) / 8.0
    g = gaussian_kernel(sigma)
    sxx = correlate_separable(ix * ix, g)
    syy = correlate_separable(iy * iy, g)
    sxy = correlate_separable(ix * iy, g)
    tr = sxx + syy
    return sxx * syy - sxy * sxy - k_harris * tr * tr


def local_maxima(resp: np.ndarray) -> np.ndarray:
    """3x3 non-maximum suppression over positive responses.

    A pixel survives if it is >= all eight neighbours and strictly greater
    than the neighbours that precede it in raster order, so plateaus keep
    only their first pixel.
    """
    h, w = resp.shape
    padded = np.pad(resp, 1, mode="constant", constant_values=-np.inf)
    keep = resp > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            if (dy, dx) < (0, 0):
                keep &= resp > nb
            else:
                keep &= resp >= nb
    return keep


def pyramid(img: GrayImage, levels: int, factor: float = PYRAMID_FACTOR) -> list[np.ndarray]:
    """Float pyramid; level l samples level 0 at x0 = x_l * factor**l."""
    base = img.pixels.astype(np.float64)
    out = [base]
    h, w = base.shape
    for lvl in range(1, levels):
        s = factor ** lvl
        blurred = correlate_separable(base, gaussian_kernel(0.5 * math.sqrt(s * s - 1.0)))
        wl = int(math.floor((w - 1) / s)) + 1
        hl = int(math.floor((h - 1) / s)) + 1
        xs, ys = np.meshgrid(np.arange(wl) * s, np.arange(hl) * s)
        out.append(bilinear(blurred, np.minimum(xs, w - 1), np.minimum(ys, h - 1)))
    return out


def harris_detect(img: GrayImage, max_keypoints: int = 1000, levels: int = 3,
                  k_harris: float = 0.04, orientation_radius: int | None = 15) -> list[Keypoint]:
    """Detect Harris corners over a 1.5x pyramid.

    Keypoints are returned in level-0 coordinates, strongest first, with
    ``scale = 1.5**level``.  Orientation comes from the intensity centroid
    of the level-0 image unless `orientation_radius` is None.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    s_max = PYRAMID_FACTOR ** (levels - 1)
    if (img.width - 1) / s_max + 1 < 64 or (img.height - 1) / s_max + 1 < 64:
        raise ValueError(f"{img.width}x{img.height} image is too small for {levels} pyramid levels")

    found = []
    for lvl, layer in enumerate(pyramid(img, levels)):
        s = PYRAMID_FACTOR ** lvl
        resp = harris_response(layer, k_harris)
        ys, xs = np.nonzero(local_maxima(resp))
        x0 = xs * s
        y0 = ys * s
        inside = ((x0 >= BORDER) & (x0 <= img.width - 1 - BORDER)
                  & (y0 >= BORDER) & (y0 <= img.height - 1 - BORDER))
        for x, y, r in zip(x0[inside], y0[inside], resp[ys[inside], xs[inside]]):
            found.append((-float(r), float(y), float(x), lvl))
    found.sort()
    found = found[:max_keypoints]

    kps = []
    for neg_r, y, x, lvl in found:
        kp = Keypoint(x, y, 0.0, PYRAMID_FACTOR ** lvl, -neg_r)
        if orientation_radius is not None:
            kp = kp.with_orientation(intensity_centroid_orientation(img, kp, orientation_radius))
        kps.append(kp)
    return kps


_DISC_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _disc(radius: int):
    if radius not in _DISC_CACHE:
        d = np.arange(-radius, radius + 1)
        dx, dy = np.meshgrid(d, d)
        m = dx * dx + dy * dy <= radius * radius
        _DISC_CACHE[radius] = (dx[m], dy[m])
    return _DISC_CACHE[radius]


def intensity_centroid_orientation(img: GrayImage, kp: Keypoint, radius: int = 15) -> float:
    """Angle of the intensity centroid, atan2(m01, m10), in [0, 2*pi).

    Moments are taken over integer disc offsets from the keypoint; off-grid
    keypoints are sampled bilinearly so the estimate turns with the image.
    """
    x, y = float(kp.x), float(kp.y)
    if (math.floor(x) - radius < 0 or math.floor(y) - radius < 0
            or math.ceil(x) + radius >= img.width or math.ceil(y) + radius >= img.height):
        raise OutOfBoundsError(f"orientation disc of radius {radius} around {kp} leaves the image")
    dx, dy = _disc(radius)
    if x.is_integer() and y.is_integer():
        vals = img.pixels[int(y) + dy, int(x) + dx].astype(np.int64)
        m10 = int((dx * vals).sum())
        m01 = int((dy * vals).sum())
        if m10 == 0 and m01 == 0:
            return 0.0
    else:
        vals = bilinear(img.pixels, x + dx, y + dy)
        m10 = float((dx * vals).sum())
        m01 = float((dy * vals).sum())
        if abs(m10) < 1e-9 and abs(m01) < 1e-9:
            return 0.0
    return normalize_angle(math.atan2(m01, m10))


# ---------------------------------------------------------------------------
# keypoint text files


def format_keypoints(kps) -> str:
    lines = ["# x y orientation scale response"]
    for kp in kps:
        lines.append(f"{kp.x:.9g} {kp.y:.9g} {kp.orientation:.9g} {kp.scale:.9g} {kp.response:.9g}")
    return "\n".join(lines) + "\n"


def parse_keypoints(text: str) -> list[Keypoint]:
    """Parse ``x y [orientation [scale [response]]]`` lines; '#' starts a comment."""
    kps = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not 2 <= len(parts) <= 5:
            raise ValueError(f"line {lineno}: expected 2-5 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        x, y = vals[:2]
        theta = normalize_angle(vals[2]) if len(vals) > 2 else 0.0
        scale = vals[3] if len(vals) > 3 else 1.0
        resp = vals[4] if len(vals) > 4 else 0.0
        kps.append(Keypoint(x, y, theta, scale, resp))
    return kps


def write_keypoints(path, kps) -> None:
    Path(path).write_text(format_keypoints(kps))


def read_keypoints(path) -> list[Keypoint]:
    return parse_keypoints(Path(path).read_text())
