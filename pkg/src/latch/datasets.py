"""Brown patch-pair and Oxford image-sequence datasets; homographies."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latch.image import GrayImage, read_image

PATCH = 64
MOSAIC = 1024
PER_ROW = MOSAIC // PATCH
PER_MOSAIC = PER_ROW * PER_ROW


class DatasetError(RuntimeError):
    """Missing or malformed dataset files."""


class PointAtInfinity(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# homographies


@dataclass(frozen=True, eq=False)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def project_many(self, pts: np.ndarray) -> np.ndarray:
        """Project an (n, 2) array; points at infinity come back as inf."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        hom = np.c_[pts, np.ones(len(pts))] @ self.matrix.T
        w = hom[:, 2:3]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = hom[:, :2] / w
        out[np.abs(w[:, 0]) <= 1e-12] = np.inf
        return out


def project(h: Homography, p) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    m = h.matrix
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= 1e-12:
        raise PointAtInfinity(f"({x}, {y}) maps to infinity")
    return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
            (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w)


def parse_homography(text: str) -> Homography:
    vals = [float(v) for v in text.split()]
    if len(vals) != 9:
        raise ValueError(f"expected 9 values, got {len(vals)}")
    return Homography(np.array(vals).reshape(3, 3))


def format_homography(h: Homography) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in h.matrix) + "\n"


# ---------------------------------------------------------------------------
# Oxford


@dataclass
class OxfordSet:
    name: str
    images: list[GrayImage]
    homographies: list[Homography]  # H_1->j for j = 2..6

    def __post_init__(self):
        if len(self.images) != 6 or len(self.homographies) != 5:
            raise DatasetError(f"{self.name}: need 6 images and 5 homographies, "
                               f"got {len(self.images)} and {len(self.homographies)}")


IMAGE_EXTS = (".pgm", ".ppm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _find_image(d: Path, stem: str) -> Path:
    for ext in IMAGE_EXTS:
        p = d / f"{stem}{ext}"
        if p.exists():
            return p
    raise DatasetError(f"missing image {d / stem}.* (tried {', '.join(IMAGE_EXTS)})")


def load_oxford(directory) -> OxfordSet:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{d} is not a directory")
    images = [read_image(_find_image(d, f"img{i}")) for i in range(1, 7)]
    homs = []
    for j in range(2, 7):
        p = d / f"H1to{j}p"
        if not p.exists():
            raise DatasetError(f"missing homography file {p}")
        try:
            homs.append(parse_homography(p.read_text()))
        except ValueError as exc:
            raise DatasetError(f"{p}: {exc}") from None
    return OxfordSet(d.name, images, homs)


def write_oxford(directory, oxford: OxfordSet) -> None:
    from latch.image import write_pgm

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(oxford.images, 1):
        write_pgm(d / f"img{i}.pgm", img)
    for j, h in enumerate(oxford.homographies, 2):
        (d / f"H1to{j}p").write_text(format_homography(h))


# ---------------------------------------------------------------------------
# Brown


@dataclass
class LabeledPairSet:
    """64x64 windows plus labeled (a, b) index pairs; label True means 'same'."""

    windows: np.ndarray          # (n, 64, 64) uint8
    pairs: np.ndarray            # (m, 2) indices into windows
    labels: np.ndarray           # (m,) bool
    patch_ids: np.ndarray = field(default=None)  # global patch id per window
    name: str = ""

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.uint8)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=bool).ravel()
        if self.windows.ndim != 3 or self.windows.shape[1:] != (PATCH, PATCH):
            raise DatasetError(f"windows must be (n, 64, 64), got {self.windows.shape}")
        if len(self.pairs) != len(self.labels):
            raise DatasetError("one label per pair is required")
        if len(self.pairs) and (self.pairs.min() < 0 or self.pairs.max() >= len(self.windows)):
            raise DatasetError("pair index out of range")
        if self.patch_ids is None:
            self.patch_ids = np.arange(len(self.windows))

    @property
    def n_same(self) -> int:
        return int(self.labels.sum())

    @property
    def n_not_same(self) -> int:
        return int((~self.labels).sum())

    def __len__(self):
        return len(self.pairs)

    def crop(self, side: int = 48) -> np.ndarray:
        """Center crops of every window, (n, side, side)."""
        lo = (PATCH - side) // 2
        return self.windows[:, lo:lo + side, lo:lo + side]

    def head(self, n: int) -> "LabeledPairSet":
        """The first `n` pairs, keeping only the windows they reference."""
        return self.select(np.arange(min(n, len(self))))

    def select(self, idx) -> "LabeledPairSet":
        pairs = self.pairs[idx]
        used, inv = np.unique(pairs, return_inverse=True)
        return LabeledPairSet(self.windows[used], inv.reshape(-1, 2), self.labels[idx],
                              self.patch_ids[used], self.name)


_M50 = re.compile(r"m50_(\d+)_(\d+)_0\.txt$")


def match_files(directory) -> list[Path]:
    return sorted((p for p in Path(directory).glob("m50_*.txt") if _M50.search(p.name)),
                  key=lambda p: int(_M50.search(p.name).group(1)))


def mosaic_files(directory) -> list[Path]:
    d = Path(directory)
    files = sorted(d.glob("patches*.pgm"))
    if not files:
        files = sorted(d.glob("patches*.bmp"))
    return files


def read_info(directory) -> np.ndarray:
    p = Path(directory) / "info.txt"
    if not p.exists():
        raise DatasetError(f"missing {p}")
    ids = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            ids.append(int(line.split()[0]))
        except ValueError:
            raise DatasetError(f"{p}:{lineno}: bad point id") from None
    return np.array(ids, dtype=np.int64)


def read_matches(path) -> tuple[np.ndarray, np.ndarray]:
    """(patch id pairs, same labels) from an m50 file."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 5:
            raise DatasetError(f"{path}:{lineno}: expected 'patch1 point1 _ patch2 point2 _'")
        try:
            rows.append((int(parts[0]), int(parts[1]), int(parts[3]), int(parts[4])))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-integer field") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr[:, [0, 2]], arr[:, 1] == arr[:, 3]


def load_brown(directory, n_pairs: int | None = None, match_file=None,
               compact: bool = False, max_pairs: int | None = None) -> LabeledPairSet:
    """Load a Brown et al. patch collection stored as PGM mosaics.

    `n_pairs` picks ``m50_<n>_<n>_0.txt`` (default: the largest present).
    With ``compact=True`` only the windows referenced by the (first
    `max_pairs`) pairs are kept; otherwise windows are indexed by global
    patch id.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{d} is not a directory")
    point_ids = read_info(d)
    n_patches = len(point_ids)
    mosaics = mosaic_files(d)
    if not mosaics:
        raise DatasetError(f"no patches*.pgm mosaics in {d}")
    if n_patches > len(mosaics) * PER_MOSAIC:
        raise DatasetError(f"info.txt lists {n_patches} patches but {len(mosaics)} mosaics hold "
                           f"at most {len(mosaics) * PER_MOSAIC}")

    if match_file is None:
        files = match_files(d)
        if n_pairs is not None:
            files = [p for p in files if int(_M50.search(p.name).group(1)) == n_pairs]
        if not files:
            want = f"m50_{n_pairs}_{n_pairs}_0.txt" if n_pairs else "m50_*.txt"
            raise DatasetError(f"missing match file {d / want}")
        match_file = files[-1]
    ids, labels = read_matches(match_file)
    if max_pairs is not None:
        ids, labels = ids[:max_pairs], labels[:max_pairs]
    if len(ids) and (ids.min() < 0 or ids.max() >= n_patches):
        bad = ids[(ids < 0) | (ids >= n_patches)][0]
        raise DatasetError(f"{match_file}: patch id {bad} out of range (0..{n_patches - 1})")

    if compact:
        wanted = np.unique(ids)
        pairs = np.searchsorted(wanted, ids)
    else:
        wanted = np.arange(n_patches)
        pairs = ids
    windows = np.empty((len(wanted), PATCH, PATCH), dtype=np.uint8)
    by_mosaic = wanted // PER_MOSAIC
    for m in np.unique(by_mosaic):
        px = read_image(mosaics[m]).pixels
        if px.shape != (MOSAIC, MOSAIC):
            raise DatasetError(f"{mosaics[m]}: mosaic must be {MOSAIC}x{MOSAIC}, got {px.shape[1]}x{px.shape[0]}")
        tiles = px.reshape(PER_ROW, PATCH, PER_ROW, PATCH).swapaxes(1, 2).reshape(PER_MOSAIC, PATCH, PATCH)
        sel = np.nonzero(by_mosaic == m)[0]
        windows[sel] = tiles[wanted[sel] % PER_MOSAIC]
    return LabeledPairSet(windows, pairs, labels, wanted, d.name)


def write_brown(directory, windows: np.ndarray, point_ids, pairs, name: str | None = None) -> Path:
    """Write windows in the Brown mosaic layout with an m50 match file.

    `pairs` are (patch_a, patch_b) ids; labels follow from `point_ids`.
    """
    from latch.image import write_pgm

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    windows = np.asarray(windows, dtype=np.uint8)
    point_ids = np.asarray(point_ids)
    n_mosaics = -(-len(windows) // PER_MOSAIC)
    for m in range(n_mosaics):
        tiles = np.zeros((PER_MOSAIC, PATCH, PATCH), dtype=np.uint8)
        chunk = windows[m * PER_MOSAIC:(m + 1) * PER_MOSAIC]
        tiles[:len(chunk)] = chunk
        mosaic = tiles.reshape(PER_ROW, PER_ROW, PATCH, PATCH).swapaxes(1, 2).reshape(MOSAIC, MOSAIC)
        write_pgm(d / f"patches{m:04d}.pgm", GrayImage(mosaic))
    (d / "info.txt").write_text("".join(f"{int(p)} 0\n" for p in point_ids))
    pairs = np.asarray(pairs).reshape(-1, 2)
    name = name or f"m50_{len(pairs)}_{len(pairs)}_0.txt"
    lines = [f"{a} {point_ids[a]} 0 {b} {point_ids[b]} 0\n" for a, b in pairs]
    (d / name).write_text("".join(lines))
    return d / name
