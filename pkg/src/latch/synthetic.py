"""Surrogate benchmark data generated from ordinary photographs.

``brown_like`` cuts several perturbed 64x64 views around Harris corners of
the input images (one "3-D point" per corner) and pairs them in the same /
not-same layout of the Brown collections.  ``oxford_like`` warps one image by
known near-identity homographies while adding increasing blur or darkening,
like the Bikes and Leuven sequences.  Both are deterministic given a seed.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from latch.datasets import PATCH, Homography, LabeledPairSet, OxfordSet
from latch.detector import harris_detect
from latch.image import GrayImage, bilinear, correlate_separable, gaussian_kernel


def _blur(px: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.05:
        return px
    return correlate_separable(px, gaussian_kernel(sigma))


def _view(src: np.ndarray, x: float, y: float, rng: np.random.Generator, strength: float) -> np.ndarray:
    """One photometrically and geometrically perturbed 64x64 view around (x, y)."""
    theta = rng.normal(0, 0.10 * strength)
    scale = math.exp(rng.normal(0, 0.08 * strength))
    shear = rng.normal(0, 0.06 * strength)
    aspect = math.exp(rng.normal(0, 0.05 * strength))
    c, s = math.cos(theta), math.sin(theta)
    a = scale * np.array([[c, -s], [s, c]]) @ np.array([[aspect, shear], [0.0, 1 / aspect]])
    tx, ty = rng.normal(0, 1.0 * strength, 2)
    d = np.arange(PATCH, dtype=np.float64) - PATCH // 2
    du, dv = np.meshgrid(d, d)
    xs = x + tx + a[0, 0] * du + a[0, 1] * dv
    ys = y + ty + a[1, 0] * du + a[1, 1] * dv
    h, w = src.shape
    v = bilinear(src, np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
    v = _blur(v, abs(rng.normal(0, 0.6 * strength)))
    gain = math.exp(rng.normal(0, 0.15 * strength))
    bias = rng.normal(0, 12 * strength)
    v = gain * v + bias + rng.normal(0, 4.0 * strength, v.shape)
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def brown_like(images: Sequence[GrayImage], n_pairs: int, points_per_image: int = 400,
               views_per_point: int = 3, strength: float = 1.0, seed: int = 0,
               name: str = "surrogate") -> tuple[LabeledPairSet, np.ndarray]:
    """Same/not-same pairs of perturbed views around Harris corners.

    Returns the pair set (windows indexed by patch id) and the 3-D point id of
    every window.  Half the pairs are 'same'.
    """
    rng = np.random.default_rng(seed)
    margin = 60
    windows, point_ids = [], []
    pid = 0
    for img in images:
        src = img.pixels.astype(np.float64)
        kps = harris_detect(img, max_keypoints=4 * points_per_image, levels=1, orientation_radius=None)
        kps = [k for k in kps if margin <= k.x < img.width - margin and margin <= k.y < img.height - margin]
        if len(kps) > points_per_image:
            pick = np.sort(rng.choice(len(kps), points_per_image, replace=False))
            kps = [kps[i] for i in pick]
        for kp in kps:
            for _ in range(views_per_point):
                windows.append(_view(src, kp.x, kp.y, rng, strength))
                point_ids.append(pid)
            pid += 1
    if pid < 2:
        raise ValueError("not enough corners in the source images")
    windows = np.stack(windows)
    point_ids = np.array(point_ids)
    vp = views_per_point
    n_same = n_pairs // 2
    pairs = []
    for _ in range(n_same):
        p = rng.integers(pid)
        a, b = rng.choice(vp, 2, replace=False)
        pairs.append((p * vp + a, p * vp + b))
    for _ in range(n_pairs - n_same):
        p, q = rng.choice(pid, 2, replace=False)
        pairs.append((p * vp + rng.integers(vp), q * vp + rng.integers(vp)))
    pairs = np.array(pairs)
    order = rng.permutation(len(pairs))
    pairs = pairs[order]
    labels = point_ids[pairs[:, 0]] == point_ids[pairs[:, 1]]
    return LabeledPairSet(windows, pairs, labels, name=name), point_ids


def warp(img: GrayImage, h: Homography, shape=None) -> np.ndarray:
    """Float image J with J(q) = I(H^-1 q); outside samples are clamped to the border."""
    hh, ww = shape or img.pixels.shape
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    src = h.inverse().project_many(np.c_[xs.ravel(), ys.ravel()])
    sx = np.clip(src[:, 0], 0, img.width - 1).reshape(hh, ww)
    sy = np.clip(src[:, 1], 0, img.height - 1).reshape(hh, ww)
    return bilinear(img.pixels.astype(np.float64), sx, sy)


def _near_identity(rng: np.random.Generator, w: int, h: int, amount: float) -> Homography:
    """Homography moving the image corners by up to `amount` pixels."""
    src = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    dst = src + rng.uniform(-amount, amount, src.shape)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.array(rows))
    return Homography(vt[-1].reshape(3, 3))


def oxford_like(img: GrayImage, kind: str = "blur", seed: int = 0, name: str | None = None,
                warp_px: float = 12.0, noise: float = 2.0) -> OxfordSet:
    """Six images related by known homographies with increasing blur or darkening."""
    if kind not in ("blur", "light"):
        raise ValueError("kind must be 'blur' or 'light'")
    rng = np.random.default_rng(seed)
    images = [img]
    homs = []
    for j in range(2, 7):
        h = _near_identity(rng, img.width, img.height, warp_px)
        v = warp(img, h)
        step = j - 1
        if kind == "blur":
            v = _blur(v, 0.6 * step)
        else:
            gain = 0.85 ** step
            v = 255.0 * (v / 255.0) ** (1 + 0.1 * step) * gain
        v = v + rng.normal(0, noise, v.shape)
        images.append(GrayImage(np.clip(np.rint(v), 0, 255).astype(np.uint8)))
        homs.append(h)
    return OxfordSet(name or kind, images, homs)


TRAIN_PHOTOS = ("camera", "astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field")
TEST_PHOTOS = ("brick", "grass", "gravel", "coins", "moon", "text", "page", "retina", "immunohistochemistry")


def photos(names: Sequence[str]) -> list[GrayImage]:
    """Grayscale versions of scikit-image's bundled sample photographs."""
    try:
        from skimage import color, data
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("surrogate photos need scikit-image") from exc
    out = []
    for n in names:
        im = getattr(data, n)()
        if im.ndim == 3:
            im = color.rgb2gray(im[..., :3]) * 255.0
        out.append(GrayImage(np.clip(np.rint(im), 0, 255).astype(np.uint8)))
    return out
