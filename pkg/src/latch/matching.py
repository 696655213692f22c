"""Hamming distance and brute-force binary descriptor matching."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Match:
    query_index: int
    train_index: int
    distance: int


def _as_bytes(d) -> np.ndarray:
    bits = getattr(d, "bits", d)
    if isinstance(bits, (bytes, bytearray)):
        return np.frombuffer(bits, dtype=np.uint8)
    return np.asarray(bits, dtype=np.uint8)


def hamming(a, b) -> int:
    """Population count of a XOR b (descriptors, bytes or uint8 arrays)."""
    x, y = _as_bytes(a), _as_bytes(b)
    if x.shape != y.shape:
        raise ValueError(f"descriptor lengths differ: {x.size} vs {y.size} bytes")
    return int(np.bitwise_count(np.bitwise_xor(x, y)).sum())


def _stack(descs) -> np.ndarray:
    if isinstance(descs, np.ndarray):
        return np.atleast_2d(descs.astype(np.uint8, copy=False))
    rows = [_as_bytes(d) for d in descs]
    if not rows:
        return np.zeros((0, 0), dtype=np.uint8)
    if len({r.size for r in rows}) > 1:
        raise ValueError("descriptor lengths are not uniform")
    return np.stack(rows)


def distance_matrix(queries, train, block: int = 512) -> np.ndarray:
    """All pairwise Hamming distances, (n_queries, n_train) uint32."""
    q, t = _stack(queries), _stack(train)
    if q.shape[0] and t.shape[0] and q.shape[1] != t.shape[1]:
        raise ValueError(f"descriptor lengths differ: {q.shape[1]} vs {t.shape[1]} bytes")
    out = np.empty((q.shape[0], t.shape[0]), dtype=np.uint32)
    for lo in range(0, q.shape[0], block):
        x = q[lo:lo + block, None, :] ^ t[None, :, :]
        out[lo:lo + block] = np.bitwise_count(x).sum(axis=-1, dtype=np.uint32)
    return out


def match_brute_force(queries, train, mode: str = "nn", max_distance: int | None = None,
                      ratio: float | None = None, cross_check: bool = False) -> list[Match]:
    """Nearest-neighbour matching by Hamming distance.

    Ties go to the lower train index.  In ``knn2`` mode the second-nearest
    distance feeds the ratio test (``d1 < ratio * d2``); a query with no
    second neighbour, or with ``d2 == 0``, only survives when ``d1 == 0`` and
    the cross-check passes.
    """
    if mode not in ("nn", "knn2"):
        raise ValueError(f"unknown matching mode {mode!r}")
    if ratio is not None and mode != "knn2":
        raise ValueError("the ratio test needs mode='knn2'")
    t = _stack(train)
    if t.shape[0] == 0:
        raise ValueError("train set is empty")
    q = _stack(queries)
    if q.shape[0] == 0:
        return []
    dist = distance_matrix(q, t)
    best = np.argmin(dist, axis=1)
    d1 = dist[np.arange(len(q)), best]
    keep = np.ones(len(q), dtype=bool)

    if cross_check:
        back = np.argmin(dist, axis=0)
        keep &= back[best] == np.arange(len(q))
    if max_distance is not None:
        keep &= d1 <= max_distance
    if mode == "knn2" and ratio is not None:
        if t.shape[0] < 2:
            passed = np.zeros(len(q), dtype=bool)
            d2 = np.full(len(q), -1)  # no second neighbour at all
        else:
            masked = dist.astype(np.int64)
            masked[np.arange(len(q)), best] = np.iinfo(np.int64).max
            d2 = masked.min(axis=1)
            passed = d1 < ratio * d2
        # a zero second distance forces d1 == 0; only a cross-checked exact match survives
        exact = (d2 == 0) & (d1 == 0) & cross_check
        keep &= passed | exact
    return [Match(int(i), int(best[i]), int(d1[i])) for i in np.nonzero(keep)[0]]


def format_matches(matches) -> str:
    lines = ["query_index,train_index,distance"]
    lines += [f"{m.query_index},{m.train_index},{m.distance}" for m in matches]
    return "\n".join(lines) + "\n"


def write_matches(path, matches) -> None:
    Path(path).write_text(format_matches(matches))
