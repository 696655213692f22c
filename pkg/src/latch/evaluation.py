"""Patch-pair verification (ROC) and image-pair matching (recall vs 1-precision) protocols."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from latch.datasets import LabeledPairSet, OxfordSet
from latch.descriptor import ArrangementSet, ExtractOptions, describe, describe_windows
from latch.detector import Keypoint, harris_detect
from latch.image import smooth_array
from latch.matching import distance_matrix


class EvaluationError(RuntimeError):
    """Metrics are undefined for the given input."""


def _split(distances, labels):
    if labels is None:
        rows = list(distances)
        distances = [r[0] for r in rows]
        labels = [r[1] for r in rows]
    d = np.asarray(distances, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if d.shape != y.shape:
        raise ValueError("one label per distance is required")
    return d, y


# ---------------------------------------------------------------------------
# same / not-same verification


def verify_pairs(pairset: LabeledPairSet, arrs: ArrangementSet, opts: ExtractOptions | None = None,
                 threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Hamming distance per pair from descriptors of the center-cropped windows."""
    windows = pairset.windows
    if opts is not None:
        arrs = arrs.truncated(8 * opts.descriptor_bytes)
        if opts.sigma:
            windows = smooth_array(windows, opts.sigma)
    lo = (windows.shape[1] - arrs.window_side) // 2
    windows = windows[:, lo:lo + arrs.window_side, lo:lo + arrs.window_side]
    desc = describe_windows(np.ascontiguousarray(windows), arrs, threads)
    x = desc[pairset.pairs[:, 0]] ^ desc[pairset.pairs[:, 1]]
    dist = np.bitwise_count(x).sum(axis=1, dtype=np.int64)
    return dist, pairset.labels.copy()


@dataclass
class RocCurve:
    thresholds: np.ndarray  # first entry -inf: nothing predicted same
    fpr: np.ndarray
    tpr: np.ndarray

    def auc(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))


def roc_curve(distances, labels=None) -> RocCurve:
    """Sweep 'same iff distance <= threshold' over every distinct distance."""
    d, y = _split(distances, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs at least one pair of each label")
    thr, inv = np.unique(d, return_inverse=True)
    pos = np.bincount(inv, weights=y, minlength=len(thr))
    neg = np.bincount(inv, weights=~y, minlength=len(thr))
    tpr = np.r_[0.0, np.cumsum(pos) / n_pos]
    fpr = np.r_[0.0, np.cumsum(neg) / n_neg]
    return RocCurve(np.r_[-np.inf, thr], fpr, tpr)


def accuracy_at(distances, labels, threshold: float) -> float:
    d, y = _split(distances, labels)
    return float(((d <= threshold) == y).mean())


def learn_threshold(distances, labels=None) -> float:
    """Threshold maximizing training accuracy; ties go to the smallest threshold.

    This is the decision rule a linear SVM on a single scalar reduces to.
    """
    d, y = _split(distances, labels)
    if len(d) == 0:
        raise EvaluationError("no training pairs")
    thr, inv = np.unique(d, return_inverse=True)
    pos = np.cumsum(np.bincount(inv, weights=y, minlength=len(thr)))
    neg = np.cumsum(np.bincount(inv, weights=~y, minlength=len(thr)))
    n_neg = (~y).sum()
    correct = np.r_[n_neg, pos + (n_neg - neg)]
    cands = np.r_[thr[0] - 1, thr]
    return float(cands[int(np.argmax(correct))])


@dataclass
class RocMetrics:
    auc: float
    accuracy: float           # at the supplied threshold, else the best one
    err95: float
    best_accuracy: float
    threshold: float | None = None
    curve: RocCurve | None = field(default=None, repr=False)


def roc_metrics(distances, labels=None, threshold: float | None = None) -> RocMetrics:
    """AUC, accuracy and 95% error rate for (distance, label) rows.

    `err95` is 100 x FPR at the smallest threshold reaching TPR >= 0.95.
    """
    d, y = _split(distances, labels)
    curve = roc_curve(d, y)
    n = len(d)
    correct = (curve.tpr * y.sum() + (1 - curve.fpr) * (~y).sum())
    best = float(correct.max() / n)
    acc = best if threshold is None else accuracy_at(d, y, threshold)
    i95 = int(np.argmax(curve.tpr >= 0.95 - 1e-12))
    return RocMetrics(curve.auc(), acc, 100.0 * float(curve.fpr[i95]), best, threshold, curve)


def format_roc_csv(curve: RocCurve) -> str:
    lines = ["threshold,fpr,tpr"]
    for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{t:g},{f:.6f},{p:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Oxford image matching


@dataclass
class PrCurve:
    pair: tuple[int, int]
    thresholds: np.ndarray
    recall: np.ndarray
    one_minus_precision: np.ndarray
    retrieved: np.ndarray
    n_ground_truth: int
    n_keypoints: tuple[int, int]

    def auc(self) -> float:
        """Trapezoid area from (0, 0) through the swept points, closed at 1-precision = 1."""
        if len(self.recall) == 0:
            return 0.0
        x = np.r_[0.0, self.one_minus_precision, 1.0]
        y = np.r_[0.0, self.recall, self.recall[-1]]
        return float(np.trapezoid(y, x))

    def max_recall_at_full_precision(self) -> float:
        m = self.one_minus_precision == 0
        return float(self.recall[m].max()) if m.any() else 0.0


def pr_curve(d1: np.ndarray, correct: np.ndarray, n_gt: int, n_bits: int,
             pair=(1, 2), n_keypoints=(0, 0)) -> PrCurve:
    """Sweep the Hamming threshold over nearest-neighbour matches."""
    thr, rec, omp, ret = [], [], [], []
    for t in range(n_bits + 1):
        r = d1 <= t
        n_r = int(r.sum())
        if n_r == 0:
            continue
        n_c = int((r & correct).sum())
        thr.append(t)
        rec.append(n_c / n_gt)
        omp.append(1.0 - n_c / n_r)
        ret.append(n_r)
    return PrCurve(pair, np.array(thr), np.array(rec), np.array(omp), np.array(ret, dtype=np.int64),
                   n_gt, n_keypoints)


def match_pair(img_a, img_b, h, arrs: ArrangementSet, opts: ExtractOptions, kps_a: Sequence[Keypoint],
               kps_b: Sequence[Keypoint], eps: float = 2.5, pair=(1, 2)) -> PrCurve:
    da = describe(img_a, kps_a, arrs, opts)
    db = describe(img_b, kps_b, arrs, opts)
    if len(da) == 0 or len(db) == 0:
        raise EvaluationError(f"pair {pair}: no describable keypoints")
    dist = distance_matrix(da.bits, db.bits)
    best = np.argmin(dist, axis=1)
    d1 = dist[np.arange(len(da)), best].astype(np.int64)
    pa = np.array([[k.x, k.y] for k in da.keypoints])
    pb = np.array([[k.x, k.y] for k in db.keypoints])
    proj = h.project_many(pa)
    geo = np.sqrt(((proj[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    geo = np.nan_to_num(geo, nan=np.inf)
    has_gt = (geo <= eps).any(axis=1)
    n_gt = int(has_gt.sum())
    if n_gt == 0:
        raise EvaluationError(f"pair {pair}: no ground-truth correspondences within {eps} px")
    correct = geo[np.arange(len(da)), best] <= eps
    return pr_curve(d1, correct, n_gt, 8 * da.bits.shape[1], pair, (len(da), len(db)))


@dataclass
class OxfordResult:
    name: str
    curves: list[PrCurve]

    @property
    def aucs(self) -> list[float]:
        return [c.auc() for c in self.curves]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))


def oxford_eval(oxford: OxfordSet, arrs: ArrangementSet, opts: ExtractOptions | None = None,
                eps: float = 2.5, max_keypoints: int = 1000, levels: int = 3,
                keypoints: dict[int, list[Keypoint]] | None = None,
                pairs: Sequence[int] = (2, 3, 4, 5, 6)) -> OxfordResult:
    """Image 1 against each image j; keypoints are detected unless supplied per image index."""
    opts = opts or ExtractOptions(patch_size=arrs.patch_size, window_side=arrs.window_side)

    def kps_for(i):
        if keypoints is not None and i in keypoints:
            return keypoints[i]
        return harris_detect(oxford.images[i - 1], max_keypoints, levels)

    k1 = kps_for(1)
    curves = []
    for j in pairs:
        curves.append(match_pair(oxford.images[0], oxford.images[j - 1], oxford.homographies[j - 2],
                                 arrs, opts, k1, kps_for(j), eps, (1, j)))
    return OxfordResult(oxford.name, curves)


def format_pr_csv(curve: PrCurve) -> str:
    lines = ["threshold,recall,one_minus_precision"]
    for t, r, p in zip(curve.thresholds, curve.recall, curve.one_minus_precision):
        lines.append(f"{int(t)},{r:.6f},{p:.6f}")
    return "\n".join(lines) + "\n"


def write_csv(path, text: str) -> None:
    Path(path).write_text(text)
