"""Learning triplet arrangements from labeled same/not-same window pairs.

Four selection strategies are provided: random, unsupervised (bits closest
to balanced, decorrelated), proposed (top quality score) and combined
(quality order plus the correlation filter).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from latch.datasets import LabeledPairSet
from latch.descriptor import ArrangementSet, compare_patches, format_arrangement, max_offset
from latch.image import smooth_array
from latch.rng import Xoshiro256

log = logging.getLogger(__name__)

STRATEGIES = ("random", "unsupervised", "proposed", "combined")


@dataclass(frozen=True, eq=False)
class CandidatePool:
    offsets: np.ndarray  # (n, 6)
    patch_size: int = 7
    window_side: int = 48
    seed: int = 0

    def __len__(self):
        return len(self.offsets)

    def flat_indices(self, idx=slice(None)):
        side, r, c = self.window_side, self.patch_size // 2, self.window_side // 2
        d = np.arange(-r, r + 1)
        base = (d[:, None] * side + d[None, :]).ravel()
        rows = self.offsets[idx]
        return tuple(((c + rows[:, j + 1]) * side + (c + rows[:, j]))[:, None] + base
                     for j in (0, 2, 4))

    def arrangement(self, indices) -> ArrangementSet:
        return ArrangementSet(self.offsets[np.asarray(indices, dtype=np.int64)],
                              self.patch_size, self.window_side)


def generate_candidates(n: int, k: int = 7, window_side: int = 48, seed: int = 0) -> CandidatePool:
    """`n` distinct random triplets with non-coincident centers."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = max_offset(k, window_side)
    if m < 1:
        raise ValueError(f"{k}x{k} patches do not fit a {window_side}-px window")
    cells = (2 * m + 1) ** 2
    if n > cells * (cells - 1) * (cells - 2):
        raise ValueError(f"only {cells * (cells - 1) * (cells - 2)} distinct triplets exist, {n} requested")
    rng = Xoshiro256(seed)
    seen = set()
    rows = []
    while len(rows) < n:
        t = tuple(rng.integers(-m, m) for _ in range(6))
        a, p1, p2 = t[0:2], t[2:4], t[4:6]
        if a == p1 or a == p2 or p1 == p2 or t in seen:
            continue
        seen.add(t)
        rows.append(t)
    return CandidatePool(np.array(rows, dtype=np.int64), k, window_side, seed)


@dataclass
class BitMatrix:
    """Candidate responses over windows, rows packed little-endian."""

    packed: np.ndarray  # (n_candidates, ceil(n_windows / 8)) uint8
    n_windows: int

    def row(self, i: int) -> np.ndarray:
        return np.unpackbits(self.packed[i], count=self.n_windows, bitorder="little").astype(bool)

    def ones(self) -> np.ndarray:
        return np.bitwise_count(self.packed).sum(axis=1, dtype=np.int64)

    def __len__(self):
        return len(self.packed)


def _crop_flat(pairset: LabeledPairSet, side: int) -> np.ndarray:
    w = pairset.crop(side)
    return np.ascontiguousarray(w.reshape(len(w), side * side), dtype=np.int32)


def response_bits(pool: CandidatePool, pairset: LabeledPairSet, k: int | None = None,
                  threads: int = 1, block: int = 64) -> BitMatrix:
    """Evaluate every candidate on every (center-cropped) window."""
    if k is not None and k != pool.patch_size:
        raise ValueError(f"pool was generated for k={pool.patch_size}, got k={k}")
    flat = _crop_flat(pairset, pool.window_side)
    n_w = len(flat)
    packed = np.zeros((len(pool), -(-n_w // 8)), dtype=np.uint8)

    def run(lo):
        idx = pool.flat_indices(slice(lo, lo + block))
        bits = compare_patches(flat, *idx, chunk=256)
        packed[lo:lo + block] = np.packbits(bits.T, axis=1, bitorder="little")

    starts = range(0, len(pool), block)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(run, starts))
    else:
        for i, lo in enumerate(starts):
            run(lo)
            if i % 20 == 0:
                log.debug("response bits: %d/%d candidates", lo, len(pool))
    return BitMatrix(packed, n_w)


def quality_score(candidate_bits, pairset: LabeledPairSet) -> int:
    """Same pairs with equal bits plus not-same pairs with unequal bits."""
    b = np.asarray(candidate_bits, dtype=bool)
    eq = b[pairset.pairs[:, 0]] == b[pairset.pairs[:, 1]]
    return int((eq == pairset.labels).sum())


def quality_scores(bits: BitMatrix, pairset: LabeledPairSet, block: int = 256) -> np.ndarray:
    out = np.empty(len(bits), dtype=np.int64)
    a, b = pairset.pairs[:, 0], pairset.pairs[:, 1]
    for lo in range(0, len(bits), block):
        rows = np.unpackbits(bits.packed[lo:lo + block], axis=1, count=bits.n_windows,
                             bitorder="little").astype(bool)
        eq = rows[:, a] == rows[:, b]
        out[lo:lo + block] = (eq == pairset.labels).sum(axis=1)
    return out


def pearson_bit_correlation(a, b) -> float:
    """Pearson correlation of two 0/1 vectors; 0 when either is constant."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two samples")
    n = x.size
    sx, sy, sxy = x.sum(), y.sum(), (x * y).sum()
    var = sx * (n - sx) * sy * (n - sy)
    if var == 0:
        return 0.0
    return float((n * sxy - sx * sy) / math.sqrt(var))


@dataclass
class Selection:
    """Chosen pool indices in selection order, with the key they were ranked by."""

    strategy: str
    indices: np.ndarray
    pool: CandidatePool
    scores: np.ndarray | None = None
    relaxed: bool = False
    n_decorrelated: int = 0

    @property
    def arrangement(self) -> ArrangementSet:
        return self.pool.arrangement(self.indices)


def greedy_decorrelate(order, bits: BitMatrix, T: int, tau: float) -> tuple[np.ndarray, bool, int]:
    """Walk `order`, accepting rows whose |correlation| with every accepted row is < tau.

    Falls back to appending the earliest rejected rows when fewer than T
    pass; returns (indices, relaxed, number accepted by the filter).
    """
    n = bits.n_windows
    ones = bits.ones()
    accepted: list[int] = []
    acc_rows = np.empty((T, bits.packed.shape[1]), dtype=np.uint8)
    acc_ones = np.empty(T, dtype=np.float64)
    for c in order:
        if len(accepted) == T:
            break
        c = int(c)
        k = len(accepted)
        if k:
            n11 = np.bitwise_count(acc_rows[:k] & bits.packed[c]).sum(axis=1, dtype=np.int64)
            na, nb = acc_ones[:k], float(ones[c])
            var = na * (n - na) * nb * (n - nb)
            num = n * n11.astype(np.float64) - na * nb
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(var > 0, num / np.sqrt(var), 0.0)
            if not (np.abs(r) < tau).all():
                continue
        acc_rows[k] = bits.packed[c]
        acc_ones[k] = ones[c]
        accepted.append(c)
    n_ok = len(accepted)
    relaxed = n_ok < T
    if relaxed:
        taken = set(accepted)
        for c in order:
            if len(accepted) == T:
                break
            if int(c) not in taken:
                accepted.append(int(c))
    return np.array(accepted, dtype=np.int64), relaxed, n_ok


def _check_T(pool, T):
    if T > len(pool):
        raise ValueError(f"cannot select {T} of {len(pool)} candidates")
    if T < 1:
        raise ValueError("T must be >= 1")


def score_order(scores) -> np.ndarray:
    """Indices by descending score, ties by index."""
    return np.argsort(-np.asarray(scores, dtype=np.int64), kind="stable")


def select_proposed(pool: CandidatePool, scores, T: int) -> Selection:
    _check_T(pool, T)
    return Selection("proposed", score_order(scores)[:T], pool, np.asarray(scores))


def select_combined(pool: CandidatePool, bits: BitMatrix, scores, T: int, tau: float = 0.2) -> Selection:
    _check_T(pool, T)
    idx, relaxed, n_ok = greedy_decorrelate(score_order(scores), bits, T, tau)
    return Selection("combined", idx, pool, np.asarray(scores), relaxed, n_ok)


def balance_order(bits: BitMatrix) -> np.ndarray:
    """Indices by |mean - 0.5| ascending (exact integer key |2*ones - n|), ties by index."""
    key = np.abs(2 * bits.ones() - bits.n_windows)
    return np.argsort(key, kind="stable")


def select_unsupervised(pool: CandidatePool, bits: BitMatrix, T: int, tau: float = 0.2) -> Selection:
    _check_T(pool, T)
    idx, relaxed, n_ok = greedy_decorrelate(balance_order(bits), bits, T, tau)
    return Selection("unsupervised", idx, pool, None, relaxed, n_ok)


def select_random(pool: CandidatePool, T: int, seed: int = 0) -> Selection:
    _check_T(pool, T)
    idx = np.array(Xoshiro256(seed).sample(len(pool), T), dtype=np.int64)
    return Selection("random", idx, pool)


@dataclass
class LearnResult:
    selection: Selection
    scores: np.ndarray
    n_pairs: int
    n_same: int
    tau: float
    seed: int

    @property
    def arrangement(self) -> ArrangementSet:
        return self.selection.arrangement


def learn(pairset: LabeledPairSet, strategy: str = "combined", n_candidates: int = 5000, T: int = 256,
          tau: float = 0.2, seed: int = 0, patch_size: int = 7, window_side: int = 48,
          threads: int = 1, sigma: float | None = None) -> LearnResult:
    """Candidate generation, scoring and selection in one call.

    `sigma` pre-smooths the windows (used for the 1x1 pixel variant).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if sigma:
        pairset = replace(pairset, windows=smooth_array(pairset.windows, sigma))
    pool = generate_candidates(n_candidates, patch_size, window_side, seed)
    bits = response_bits(pool, pairset, threads=threads)
    scores = quality_scores(bits, pairset)
    if strategy == "random":
        sel = select_random(pool, T, seed)
    elif strategy == "unsupervised":
        sel = select_unsupervised(pool, bits, T, tau)
    elif strategy == "proposed":
        sel = select_proposed(pool, scores, T)
    else:
        sel = select_combined(pool, bits, scores, T, tau)
    return LearnResult(sel, scores, len(pairset), pairset.n_same, tau, seed)


def format_report(result: LearnResult) -> str:
    sel = result.selection
    lines = [
        f"# strategy {sel.strategy}",
        f"# candidates {len(sel.pool)} patch_size {sel.pool.patch_size} window {sel.pool.window_side} seed {result.seed}",
        f"# pairs {result.n_pairs} same {result.n_same} not_same {result.n_pairs - result.n_same}",
        f"# tau {result.tau:g}",
        f"# relaxed {'yes' if sel.relaxed else 'no'}",
    ]
    if sel.strategy in ("combined", "unsupervised"):
        lines.append(f"# decorrelated {sel.n_decorrelated} of {len(sel.indices)}")
    lines.append("rank pool_index score ax ay x1 y1 x2 y2")
    for rank, i in enumerate(sel.indices, 1):
        row = " ".join(str(int(v)) for v in sel.pool.offsets[i])
        lines.append(f"{rank} {int(i)} {int(result.scores[i])} {row}")
    return "\n".join(lines) + "\n"


def write_learned(arr_path, report_path, result: LearnResult) -> None:
    Path(arr_path).write_text(format_arrangement(result.arrangement))
    if report_path is not None:
        Path(report_path).write_text(format_report(result))
