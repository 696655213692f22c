"""LATCH descriptor extraction, pixel-pair baseline, bit packing and file formats."""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from latch.detector import Keypoint
from latch.image import GrayImage, Window, footprint_inside, gaussian_smooth, patch_ssd, sample_windows, smooth_array

DESCRIPTOR_BYTES = (4, 8, 16, 32, 64)
PATCH_SIZES = (1, 3, 5, 7, 9, 11, 13, 15)
ARR_MAGIC = "LATCH-ARR"
DESC_MAGIC = b"LTCHDESC"
DEFAULT_ARRANGEMENT = "latch_default.arr"


class ConfigurationError(ValueError):
    """Arrangement set and extraction options disagree."""


def max_offset(patch_size: int, window_side: int) -> int:
    """Largest |coordinate| of a patch center that keeps the patch in the window."""
    return window_side // 2 - math.ceil(patch_size / 2)


class TripletArrangement(NamedTuple):
    """Anchor and two companion patch centers, (x, y) offsets from the window center."""

    anchor: tuple[int, int]
    first: tuple[int, int]
    second: tuple[int, int]

    @classmethod
    def from_row(cls, row) -> "TripletArrangement":
        ax, ay, x1, y1, x2, y2 = (int(v) for v in row)
        return cls((ax, ay), (x1, y1), (x2, y2))

    def as_row(self) -> tuple[int, ...]:
        return (*self.anchor, *self.first, *self.second)


def _check_offsets(rows: np.ndarray, patch_size: int, window_side: int) -> None:
    bound = max_offset(patch_size, window_side)
    bad = np.nonzero(np.abs(rows).max(axis=1) > bound)[0]
    if len(bad):
        raise ConfigurationError(
            f"entry {bad[0] + 1} has an offset beyond +/-{bound} "
            f"for {patch_size}x{patch_size} patches in a {window_side}-px window")


@dataclass(frozen=True, eq=False)
class ArrangementSet:
    """Ordered triplet arrangements; bit t of a descriptor comes from triplet t."""

    offsets: np.ndarray  # (T, 6) int: ax ay x1 y1 x2 y2
    patch_size: int = 7
    window_side: int = 48
    version: int = 1

    def __post_init__(self):
        rows = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 6)
        rows.setflags(write=False)
        object.__setattr__(self, "offsets", rows)
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigurationError(f"patch size must be odd, got {self.patch_size}")
        if self.window_side < 2 or self.window_side % 2:
            raise ConfigurationError(f"window side must be even, got {self.window_side}")
        if len(rows) == 0 or len(rows) % 8:
            raise ConfigurationError(f"triplet count must be a positive multiple of 8, got {len(rows)}")
        _check_offsets(rows, self.patch_size, self.window_side)
        a, p1, p2 = rows[:, 0:2], rows[:, 2:4], rows[:, 4:6]
        coincident = (a == p1).all(1) | (a == p2).all(1) | (p1 == p2).all(1)
        if coincident.any():
            raise ConfigurationError(f"triplet {np.argmax(coincident) + 1} has coincident centers")

    @classmethod
    def from_triplets(cls, triplets: Iterable[TripletArrangement], patch_size: int = 7,
                      window_side: int = 48) -> "ArrangementSet":
        rows = [t.as_row() for t in triplets]
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 6), patch_size, window_side)

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def n_bits(self) -> int:
        return len(self.offsets)

    @property
    def triplets(self) -> list[TripletArrangement]:
        return [TripletArrangement.from_row(r) for r in self.offsets]

    def __eq__(self, other):
        if not isinstance(other, ArrangementSet):
            return NotImplemented
        return (self.patch_size == other.patch_size and self.window_side == other.window_side
                and np.array_equal(self.offsets, other.offsets))

    def truncated(self, n_bits: int) -> "ArrangementSet":
        """The first `n_bits` triplets (selection order is quality order)."""
        if n_bits > len(self):
            raise ConfigurationError(f"arrangement set has {len(self)} triplets, {n_bits} requested")
        if n_bits == len(self):
            return self
        return replace(self, offsets=self.offsets[:n_bits])

    @cached_property
    def flat_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat window indices of the anchor, first and second patches, each (T, k*k)."""
        side, r, c = self.window_side, self.patch_size // 2, self.window_side // 2
        d = np.arange(-r, r + 1)
        base = (d[:, None] * side + d[None, :]).ravel()
        out = []
        for j in (0, 2, 4):
            ox, oy = self.offsets[:, j], self.offsets[:, j + 1]
            center = (c + oy) * side + (c + ox)
            out.append(center[:, None] + base[None, :])
        return tuple(out)


@dataclass(frozen=True)
class PairEntry:
    first: tuple[int, int]
    second: tuple[int, int]
    sigma_first: float = 0.0
    sigma_second: float = 0.0


@dataclass(frozen=True, eq=False)
class PairArrangementSet:
    """BRIEF-style pixel pairs with per-point smoothing."""

    offsets: np.ndarray  # (T, 4): x1 y1 x2 y2
    sigmas: np.ndarray   # (T, 2)
    window_side: int = 48

    def __post_init__(self):
        rows = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 4)
        sig = np.asarray(self.sigmas, dtype=np.float64).reshape(-1, 2)
        if len(rows) != len(sig):
            raise ConfigurationError("one sigma pair per sampling pair is required")
        if len(rows) == 0 or len(rows) % 8:
            raise ConfigurationError(f"pair count must be a positive multiple of 8, got {len(rows)}")
        _check_offsets(rows, 1, self.window_side)
        if (sig < 0).any():
            raise ConfigurationError("sigmas must be >= 0")
        object.__setattr__(self, "offsets", rows)
        object.__setattr__(self, "sigmas", sig)

    def __len__(self):
        return len(self.offsets)

    def entries(self) -> list[PairEntry]:
        return [PairEntry((int(r[0]), int(r[1])), (int(r[2]), int(r[3])), float(s[0]), float(s[1]))
                for r, s in zip(self.offsets, self.sigmas)]


def random_pairs(n: int, window_side: int = 48, sigma: float = 2.0, seed: int = 0) -> PairArrangementSet:
    """Uniformly sampled pixel pairs, one shared smoothing sigma (BRIEF G I)."""
    from latch.rng import Xoshiro256

    rng = Xoshiro256(seed)
    m = max_offset(1, window_side)
    rows = []
    while len(rows) < n:
        r = [rng.integers(-m, m) for _ in range(4)]
        if r[:2] != r[2:]:
            rows.append(r)
    return PairArrangementSet(np.array(rows), np.full((n, 2), sigma), window_side)


@dataclass(frozen=True, eq=False)
class BinaryDescriptor:
    bits: bytes
    keypoint: Keypoint

    @property
    def n_bits(self) -> int:
        return 8 * len(self.bits)

    def __eq__(self, other):
        if not isinstance(other, BinaryDescriptor):
            return NotImplemented
        return self.bits == other.bits and self.keypoint == other.keypoint


@dataclass(frozen=True)
class ExtractOptions:
    descriptor_bytes: int = 32
    patch_size: int = 7
    window_side: int = 48
    rotation_invariant: bool = True
    sigma: float | None = None
    use_scale: bool = False
    threads: int = 1
    arrangement_path: str | None = None

    def __post_init__(self):
        if self.descriptor_bytes not in DESCRIPTOR_BYTES:
            raise ConfigurationError(f"descriptor_bytes must be one of {DESCRIPTOR_BYTES}")
        if self.patch_size not in PATCH_SIZES:
            raise ConfigurationError(f"patch_size must be one of {PATCH_SIZES}")
        if self.window_side < 2 or self.window_side % 2:
            raise ConfigurationError("window_side must be even")
        if max_offset(self.patch_size, self.window_side) < 1:
            raise ConfigurationError("window too small for the patch size")
        if self.sigma is not None and self.patch_size != 1:
            raise ConfigurationError("smoothing is only defined for 1x1 patches")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")


# ---------------------------------------------------------------------------
# single-bit tests


def triplet_bit(win: Window, arr: TripletArrangement, k: int) -> int:
    """1 iff the anchor patch is farther (SSD) from `first` than from `second`."""
    return int(patch_ssd(win, arr.anchor, arr.first, k) > patch_ssd(win, arr.anchor, arr.second, k))


def pair_bit(win: Window, pair: PairEntry, cache: dict | None = None) -> int:
    """1 iff the smoothed intensity at `first` exceeds the one at `second`.

    Smoothed copies of the window are kept in `cache`, one per distinct sigma.
    """
    if cache is None:
        cache = {}
    c = win.side // 2
    vals = []
    for (ox, oy), sigma in ((pair.first, pair.sigma_first), (pair.second, pair.sigma_second)):
        if sigma not in cache:
            cache[sigma] = win.pixels if sigma == 0 else smooth_array(win.pixels, sigma)
        vals.append(int(cache[sigma][c + oy, c + ox]))
    return int(vals[0] > vals[1])


def pack_bits(bits: Sequence[int], T: int | None = None) -> bytes:
    """Pack bits so that bit t (1-based) lands at bit (t-1) % 8 of byte (t-1) // 8."""
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if T is not None and len(arr) != T:
        raise ValueError(f"expected {T} bits, got {len(arr)}")
    if len(arr) % 8:
        raise ValueError(f"bit count {len(arr)} is not a multiple of 8")
    if (arr > 1).any():
        raise ValueError("bits must be 0 or 1")
    return np.packbits(arr, bitorder="little").tobytes()


def unpack_bits(data: bytes | np.ndarray) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), bitorder="little")


# ---------------------------------------------------------------------------
# batch extraction

CHUNK = 64


def triplet_bits(windows: np.ndarray, arrs: ArrangementSet) -> np.ndarray:
    """Unpacked triplet bits for a stack of windows: (n, side, side) -> (n, T) bool."""
    n, side = windows.shape[0], arrs.window_side
    if windows.shape[1:] != (side, side):
        raise ConfigurationError(f"windows are {windows.shape[1:]}, arrangement expects {side}x{side}")
    flat = windows.reshape(n, side * side).astype(np.int32)
    return compare_patches(flat, *arrs.flat_indices)


def compare_patches(flat: np.ndarray, ia: np.ndarray, i1: np.ndarray, i2: np.ndarray,
                    chunk: int = CHUNK) -> np.ndarray:
    """SSD(anchor, first) > SSD(anchor, second) for flat int32 windows (n, side*side).

    Index arrays are (T, k*k); returns (n, T) bool.
    """
    n = flat.shape[0]
    out = np.empty((n, ia.shape[0]), dtype=bool)
    for lo in range(0, n, chunk):
        w = flat[lo:lo + chunk]
        a = w[:, ia]
        d1 = a - w[:, i1]
        d2 = a - w[:, i2]
        out[lo:lo + chunk] = np.einsum("ntk,ntk->nt", d1, d1) > np.einsum("ntk,ntk->nt", d2, d2)
    return out


@dataclass
class DescriptorBatch:
    """Packed descriptors (n, bytes) with the keypoints that produced them."""

    bits: np.ndarray
    keypoints: list[Keypoint]
    skipped: int = 0
    skipped_indices: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.keypoints)

    def descriptors(self) -> list[BinaryDescriptor]:
        return [BinaryDescriptor(row.tobytes(), kp) for row, kp in zip(self.bits, self.keypoints)]


def _keypoint_arrays(kps: Sequence[Keypoint], opts: ExtractOptions):
    xs = np.array([k.x for k in kps], dtype=np.float64)
    ys = np.array([k.y for k in kps], dtype=np.float64)
    th = np.array([k.orientation for k in kps], dtype=np.float64)
    sc = np.array([k.scale for k in kps], dtype=np.float64)
    if not opts.rotation_invariant:
        th[:] = 0.0
    if not opts.use_scale:
        sc[:] = 1.0
    return xs, ys, th, sc


def _check_config(arrs: ArrangementSet, opts: ExtractOptions) -> ArrangementSet:
    if arrs.patch_size != opts.patch_size:
        raise ConfigurationError(f"arrangement uses {arrs.patch_size}x{arrs.patch_size} patches, "
                                 f"options ask for {opts.patch_size}x{opts.patch_size}")
    if arrs.window_side != opts.window_side:
        raise ConfigurationError(f"arrangement window is {arrs.window_side}, options ask for {opts.window_side}")
    return arrs.truncated(8 * opts.descriptor_bytes)


def describe_windows(windows: np.ndarray, arrs: ArrangementSet, threads: int = 1) -> np.ndarray:
    """Packed descriptors for pre-sampled windows, (n, T/8) uint8."""
    n = windows.shape[0]
    if n == 0:
        return np.zeros((0, len(arrs) // 8), dtype=np.uint8)
    if threads > 1 and n > CHUNK:
        step = -(-n // threads)
        step = -(-step // CHUNK) * CHUNK
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda lo: triplet_bits(windows[lo:lo + step], arrs), range(0, n, step)))
        bits = np.concatenate(parts)
    else:
        bits = triplet_bits(windows, arrs)
    return np.packbits(bits, axis=1, bitorder="little")


def describe(img: GrayImage, kps: Sequence[Keypoint], arrs: ArrangementSet,
             opts: ExtractOptions | None = None) -> DescriptorBatch:
    """Array-level extraction; keypoints whose window leaves the image are skipped."""
    opts = opts or ExtractOptions(patch_size=arrs.patch_size, window_side=arrs.window_side)
    arrs = _check_config(arrs, opts)
    if opts.sigma:
        img = gaussian_smooth(img, opts.sigma)
    kps = list(kps)
    if not kps:
        return DescriptorBatch(np.zeros((0, opts.descriptor_bytes), dtype=np.uint8), [])
    xs, ys, th, sc = _keypoint_arrays(kps, opts)
    ok = footprint_inside(img, xs, ys, th, sc, opts.window_side)
    keep = np.nonzero(ok)[0]
    windows = sample_windows(img, xs[keep], ys[keep], th[keep], sc[keep], opts.window_side)
    packed = describe_windows(windows, arrs, opts.threads)
    return DescriptorBatch(packed, [kps[i] for i in keep], int((~ok).sum()),
                           [int(i) for i in np.nonzero(~ok)[0]])


def extract(img: GrayImage, kps: Sequence[Keypoint], arrs: ArrangementSet,
            opts: ExtractOptions | None = None) -> list[BinaryDescriptor]:
    return describe(img, kps, arrs, opts).descriptors()


def extract_pixel_variant(img: GrayImage, kps: Sequence[Keypoint], arrs: ArrangementSet,
                          sigma: float | None = None, opts: ExtractOptions | None = None) -> list[BinaryDescriptor]:
    """LATCH 1x1: single smoothed pixels instead of patches."""
    if arrs.patch_size != 1:
        raise ConfigurationError("the pixel variant needs a 1x1 arrangement set")
    opts = opts or ExtractOptions(patch_size=1, window_side=arrs.window_side)
    opts = replace(opts, sigma=sigma or None)
    return extract(img, kps, arrs, opts)


def describe_pairs(img: GrayImage, kps: Sequence[Keypoint], pairs: PairArrangementSet,
                   rotation_invariant: bool = True) -> DescriptorBatch:
    """Pixel-pair baseline descriptors over the same windows LATCH uses."""
    opts = ExtractOptions(patch_size=1, window_side=pairs.window_side, rotation_invariant=rotation_invariant)
    kps = list(kps)
    nbytes = len(pairs) // 8
    if not kps:
        return DescriptorBatch(np.zeros((0, nbytes), dtype=np.uint8), [])
    xs, ys, th, sc = _keypoint_arrays(kps, opts)
    ok = footprint_inside(img, xs, ys, th, sc, pairs.window_side)
    keep = np.nonzero(ok)[0]
    windows = sample_windows(img, xs[keep], ys[keep], th[keep], sc[keep], pairs.window_side)
    c, side = pairs.window_side // 2, pairs.window_side
    flat_idx = (c + pairs.offsets[:, [1, 3]]) * side + (c + pairs.offsets[:, [0, 2]])
    smoothed = {s: (windows if s == 0 else smooth_array(windows, s)).reshape(len(keep), -1)
                for s in np.unique(pairs.sigmas)}
    v1 = np.empty((len(keep), len(pairs)), dtype=np.int16)
    v2 = np.empty_like(v1)
    for s, flat in smoothed.items():
        m1 = pairs.sigmas[:, 0] == s
        m2 = pairs.sigmas[:, 1] == s
        v1[:, m1] = flat[:, flat_idx[m1, 0]]
        v2[:, m2] = flat[:, flat_idx[m2, 1]]
    packed = np.packbits(v1 > v2, axis=1, bitorder="little")
    return DescriptorBatch(packed, [kps[i] for i in keep], int((~ok).sum()),
                           [int(i) for i in np.nonzero(~ok)[0]])


# ---------------------------------------------------------------------------
# files


def format_arrangement(arrs: ArrangementSet) -> str:
    lines = [f"{ARR_MAGIC} {arrs.version} {len(arrs)} {arrs.patch_size} {arrs.window_side}"]
    lines += [" ".join(str(int(v)) for v in row) for row in arrs.offsets]
    return "\n".join(lines) + "\n"


def parse_arrangement(text: str) -> ArrangementSet:
    rows = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if parts[0] != ARR_MAGIC or len(parts) != 5:
                raise ConfigurationError(f"line {lineno}: expected '{ARR_MAGIC} 1 <T> <k> <window_side>'")
            header = [int(p) for p in parts[1:]]
            if header[0] != 1:
                raise ConfigurationError(f"unsupported arrangement version {header[0]}")
            continue
        if len(parts) != 6:
            raise ConfigurationError(f"line {lineno}: expected 6 integers, got {len(parts)} fields")
        rows.append([int(p) for p in parts])
    if header is None:
        raise ConfigurationError("missing arrangement header")
    _, count, k, side = header
    if len(rows) != count:
        raise ConfigurationError(f"header declares {count} triplets, file has {len(rows)}")
    return ArrangementSet(np.array(rows, dtype=np.int64).reshape(-1, 6), k, side)


def write_arrangement(path, arrs: ArrangementSet) -> None:
    Path(path).write_text(format_arrangement(arrs))


def read_arrangement(path) -> ArrangementSet:
    return parse_arrangement(Path(path).read_text())


def default_arrangement() -> ArrangementSet:
    """The shipped k=7, 48-px arrangement set (512 triplets, quality ordered)."""
    text = resources.files("latch").joinpath("data", DEFAULT_ARRANGEMENT).read_text()
    return parse_arrangement(text)


_REC = struct.Struct("<ffff")


def encode_descriptors(keypoints: Sequence[Keypoint], bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    nbytes = bits.shape[1] if bits.ndim == 2 else 0
    if len(keypoints) != len(bits):
        raise ValueError("one keypoint per descriptor is required")
    out = [DESC_MAGIC, struct.pack("<II", len(keypoints), nbytes)]
    for kp, row in zip(keypoints, bits):
        out.append(_REC.pack(kp.x, kp.y, kp.orientation, kp.scale))
        out.append(row.tobytes())
    return b"".join(out)


def decode_descriptors(data: bytes) -> DescriptorBatch:
    if data[:8] != DESC_MAGIC:
        raise ValueError("not a LATCH descriptor file (bad magic)")
    if len(data) < 16:
        raise ValueError("truncated descriptor header")
    count, nbytes = struct.unpack_from("<II", data, 8)
    rec = _REC.size + nbytes
    if len(data) != 16 + count * rec:
        raise ValueError(f"descriptor file size {len(data)} does not match {count} records of {rec} bytes")
    kps = []
    bits = np.zeros((count, nbytes), dtype=np.uint8)
    for i in range(count):
        off = 16 + i * rec
        x, y, th, sc = _REC.unpack_from(data, off)
        kps.append(Keypoint(x, y, th, sc))
        bits[i] = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off + _REC.size)
    return DescriptorBatch(bits, kps)


def write_descriptors(path, keypoints: Sequence[Keypoint], bits: np.ndarray) -> None:
    Path(path).write_bytes(encode_descriptors(keypoints, bits))


def read_descriptors(path) -> DescriptorBatch:
    return decode_descriptors(Path(path).read_bytes())
