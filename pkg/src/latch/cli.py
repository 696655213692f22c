"""Command-line entry point: ``latch <command> ...``.

Exit codes: 0 success, 1 evaluation failure (metrics undefined), 2 usage or
I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from latch import datasets, descriptor, detector, evaluation, learning, matching
from latch.image import read_image

log = logging.getLogger("latch")


class UsageError(Exception):
    pass


def _options(args) -> descriptor.ExtractOptions:
    return descriptor.ExtractOptions(
        descriptor_bytes=args.bytes, patch_size=args.patch, window_side=args.window,
        rotation_invariant=not args.no_rotation, sigma=args.sigma, threads=args.threads,
        arrangement_path=args.arrangement)


def _arrangement(opts: descriptor.ExtractOptions) -> descriptor.ArrangementSet:
    if opts.arrangement_path:
        return descriptor.read_arrangement(opts.arrangement_path)
    arrs = descriptor.default_arrangement()
    if (arrs.patch_size, arrs.window_side) != (opts.patch_size, opts.window_side):
        raise UsageError(f"the shipped arrangement is {arrs.patch_size}x{arrs.patch_size} / "
                         f"{arrs.window_side} px; pass --arrangement for other settings")
    return arrs


def _add_extract_flags(p, rotation=True):
    p.add_argument("--bytes", type=int, default=32, choices=descriptor.DESCRIPTOR_BYTES,
                   help="descriptor size in bytes (default 32)")
    p.add_argument("--patch", type=int, default=7, choices=descriptor.PATCH_SIZES,
                   help="patch side k (default 7)")
    p.add_argument("--window", type=int, default=48, help="window side in pixels (default 48)")
    p.add_argument("--sigma", type=float, default=None, help="pre-smoothing sigma, 1x1 patches only")
    p.add_argument("--arrangement", help="LATCH-ARR file (default: the shipped k=7 set)")
    if rotation:
        p.add_argument("--no-rotation", action="store_true", help="ignore keypoint orientation")
    p.add_argument("--threads", type=int, default=1)


def _write_out(path, data):
    if path in (None, "-"):
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
        else:
            sys.stdout.write(data)
    else:
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(path, mode) as fh:
            fh.write(data)


# ---------------------------------------------------------------------------


def cmd_detect(args) -> int:
    img = read_image(args.image)
    kps = detector.harris_detect(img, args.max_keypoints, args.levels, args.k_harris,
                                 None if args.no_orientation else args.orientation_radius)
    _write_out(args.output, detector.format_keypoints(kps))
    log.info("%d keypoints", len(kps))
    return 0


def _load_keypoints(path, img, orientation: str):
    kps = detector.read_keypoints(path)
    if orientation == "centroid":
        radius = 15
        out = []
        for kp in kps:
            try:
                out.append(kp.with_orientation(detector.intensity_centroid_orientation(img, kp, radius)))
            except ValueError:
                out.append(kp)  # dropped later as a border keypoint
        kps = out
    return kps


def cmd_extract(args) -> int:
    opts = _options(args)
    arrs = _arrangement(opts)
    img = read_image(args.image)
    kps = _load_keypoints(args.keypoints, img, args.orientation)
    batch = descriptor.describe(img, kps, arrs, opts)
    _write_out(args.output, descriptor.encode_descriptors(batch.keypoints, batch.bits))
    print(f"skipped {batch.skipped} of {len(kps)} keypoints", file=sys.stderr)
    return 0


def cmd_learn(args) -> int:
    if args.full_scale:
        args.candidates, args.pairs = 56000, 500000
        log.warning("full-scale learning (56k candidates x 500k pairs) takes hours")
    pairset = datasets.load_brown(args.brown_dir, n_pairs=args.pairs, compact=True, max_pairs=args.max_pairs)
    log.info("%d pairs (%d same) over %d windows", len(pairset), pairset.n_same, len(pairset.windows))
    res = learning.learn(pairset, args.strategy, args.candidates, args.bits, args.tau, args.seed,
                         args.patch, args.window, args.threads, args.sigma)
    learning.write_learned(args.output, args.report, res)
    if res.selection.relaxed:
        print(f"warning: only {res.selection.n_decorrelated} candidates passed tau={args.tau}; "
              "filled with the next best (relaxed)", file=sys.stderr)
    return 0


def cmd_match(args) -> int:
    q = descriptor.read_descriptors(args.query)
    t = descriptor.read_descriptors(args.train)
    if len(q) == 0:
        out = []
    else:
        mode = "knn2" if args.ratio is not None else "nn"
        out = matching.match_brute_force(q.bits, t.bits, mode, args.max_distance, args.ratio, args.cross_check)
    _write_out(args.output, matching.format_matches(out))
    return 0


def _brown_summary(name, m: evaluation.RocMetrics) -> tuple[str, str]:
    thr = "" if m.threshold is None else f"{m.threshold:g}"
    csv = ("set,auc,acc,err95,threshold,best_acc\n"
           f"{name},{m.auc:.4f},{m.accuracy:.4f},{m.err95:.2f},{thr},{m.best_accuracy:.4f}\n")
    text = (f"{'set':<16}{'AUC':>8}{'ACC':>8}{'95% Err':>9}{'thr':>6}\n"
            f"{name:<16}{m.auc:>8.3f}{m.accuracy:>8.3f}{m.err95:>9.1f}{thr:>6}\n")
    return csv, text


def cmd_eval_brown(args) -> int:
    opts = _options(args)
    arrs = _arrangement(opts)
    if arrs.patch_size != opts.patch_size:
        raise UsageError("arrangement and --patch disagree")
    test = datasets.load_brown(args.test, n_pairs=args.test_pairs, compact=True, max_pairs=args.max_pairs)
    threshold = None
    if args.train:
        train = datasets.load_brown(args.train, n_pairs=args.train_pairs, compact=True, max_pairs=args.max_pairs)
        threshold = evaluation.learn_threshold(*evaluation.verify_pairs(train, arrs, opts, args.threads))
    d, y = evaluation.verify_pairs(test, arrs, opts, args.threads)
    m = evaluation.roc_metrics(d, y, threshold)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "roc.csv").write_text(evaluation.format_roc_csv(m.curve))
    csv, text = _brown_summary(test.name or "test", m)
    (out / "summary.csv").write_text(csv)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_eval_oxford(args) -> int:
    opts = _options(args)
    arrs = _arrangement(opts)
    rows = ["set,pair,auc,n_ground_truth,max_recall,recall_at_precision_1"]
    text = [f"{'set':<12}{'pair':>6}{'AUC':>8}{'GT':>6}{'recall@p=1':>12}"]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for d in args.sets:
        ox = datasets.load_oxford(d)
        kps = None
        if args.keypoints_dir:
            kd = Path(args.keypoints_dir) / ox.name
            kps = {i: _load_keypoints(kd / f"img{i}.txt", ox.images[i - 1], args.orientation) for i in range(1, 7)}
        res = evaluation.oxford_eval(ox, arrs, opts, args.eps, args.max_keypoints, args.levels, kps)
        for c, auc in zip(res.curves, res.aucs):
            (out / f"{ox.name}_1to{c.pair[1]}.csv").write_text(evaluation.format_pr_csv(c))
            r1 = c.max_recall_at_full_precision()
            rows.append(f"{ox.name},1-{c.pair[1]},{auc:.4f},{c.n_ground_truth},{c.recall.max():.4f},{r1:.4f}")
            text.append(f"{ox.name:<12}{'1-%d' % c.pair[1]:>6}{auc:>8.3f}{c.n_ground_truth:>6}{r1:>12.3f}")
        rows.append(f"{ox.name},mean,{res.mean_auc:.4f},,,")
        text.append(f"{ox.name:<12}{'mean':>6}{res.mean_auc:>8.3f}")
    (out / "summary.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    return 0


def bench(img, kps, arrs, opts, repetitions: int) -> float:
    """Mean wall-clock milliseconds per descriptor, warm-up pass excluded."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    batch = descriptor.describe(img, kps, arrs, opts)
    if len(batch) == 0:
        raise ValueError("no keypoint could be described")
    t0 = time.perf_counter()
    for _ in range(repetitions):
        descriptor.describe(img, kps, arrs, opts)
    return 1000.0 * (time.perf_counter() - t0) / (repetitions * len(batch))


def cmd_bench(args) -> int:
    opts = _options(args)
    arrs = _arrangement(opts)
    img = read_image(args.image)
    if args.keypoints:
        kps = _load_keypoints(args.keypoints, img, "keypoints")
    else:
        rng = np.random.default_rng(args.seed)
        m = 36
        kps = [detector.Keypoint(float(x), float(y), float(t))
               for x, y, t in zip(rng.uniform(m, img.width - 1 - m, args.random_keypoints),
                                  rng.uniform(m, img.height - 1 - m, args.random_keypoints),
                                  rng.uniform(0, 2 * np.pi, args.random_keypoints))]
    ms = bench(img, kps, arrs, opts, args.repetitions)
    print(f"descriptors {len(kps)} repetitions {args.repetitions} bytes {opts.descriptor_bytes} "
          f"patch {opts.patch_size} mean_ms {ms:.4f}")
    return 0


def cmd_synth(args) -> int:
    from latch import synthetic

    if args.kind == "brown":
        names = synthetic.TRAIN_PHOTOS if args.split == "train" else synthetic.TEST_PHOTOS
        ps, point_ids = synthetic.brown_like(synthetic.photos(names), args.pairs, args.points,
                                             strength=args.strength, seed=args.seed)
        datasets.write_brown(args.output, ps.windows, point_ids, ps.pairs)
    else:
        img = synthetic.photos([args.photo])[0]
        kind = "blur" if args.kind == "bikes" else "light"
        datasets.write_oxford(args.output, synthetic.oxford_like(img, kind, args.seed))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latch", description="LATCH binary descriptors")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="multi-scale Harris keypoints")
    p.add_argument("image")
    p.add_argument("-o", "--output", help="keypoint file (default stdout)")
    p.add_argument("--max-keypoints", type=int, default=1000)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--k-harris", type=float, default=0.04)
    p.add_argument("--orientation-radius", type=int, default=15)
    p.add_argument("--no-orientation", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("extract", help="LATCH descriptors for keypoints")
    p.add_argument("image")
    p.add_argument("keypoints")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--orientation", choices=("keypoints", "centroid"), default="keypoints",
                   help="take orientation from the keypoint file or re-estimate it")
    _add_extract_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("learn", help="learn a triplet arrangement from a Brown collection")
    p.add_argument("brown_dir")
    p.add_argument("-o", "--output", required=True, help="LATCH-ARR file to write")
    p.add_argument("--report", help="selection report")
    p.add_argument("--strategy", choices=learning.STRATEGIES, default="combined")
    p.add_argument("--candidates", type=int, default=5000)
    p.add_argument("--pairs", type=int, default=None, help="use m50_<N>_<N>_0.txt (default: largest)")
    p.add_argument("--max-pairs", type=int, default=None, help="only the first N pairs of the file")
    p.add_argument("--full-scale", action="store_true", help="56000 candidates over 500000 pairs")
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=int, default=256, help="triplets to select (multiple of 8)")
    p.add_argument("--patch", type=int, default=7, choices=descriptor.PATCH_SIZES)
    p.add_argument("--window", type=int, default=48)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("match", help="brute-force Hamming matching")
    p.add_argument("query")
    p.add_argument("train")
    p.add_argument("-o", "--output", help="match CSV (default stdout)")
    p.add_argument("--ratio", type=float, default=0.99, help="ratio test threshold (default 0.99)")
    p.add_argument("--no-ratio", dest="ratio", action="store_const", const=None)
    p.add_argument("--max-distance", type=int, default=None)
    p.add_argument("--cross-check", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="benchmark protocols")
    esub = p.add_subparsers(dest="protocol", required=True)
    b = esub.add_parser("brown", help="same/not-same ROC on a Brown collection")
    b.add_argument("--test", required=True)
    b.add_argument("--train", help="collection used to learn the decision threshold")
    b.add_argument("--test-pairs", type=int, default=None)
    b.add_argument("--train-pairs", type=int, default=None)
    b.add_argument("--max-pairs", type=int, default=None)
    b.add_argument("-o", "--output", default="eval-brown")
    _add_extract_flags(b, rotation=False)
    b.set_defaults(func=cmd_eval_brown, no_rotation=True)
    o = esub.add_parser("oxford", help="recall vs 1-precision on Oxford sequences")
    o.add_argument("sets", nargs="+", help="sequence directories (img1..6, H1to2p..H1to6p)")
    o.add_argument("--eps", type=float, default=2.5, help="reprojection tolerance in pixels")
    o.add_argument("--max-keypoints", type=int, default=1000)
    o.add_argument("--levels", type=int, default=3)
    o.add_argument("--keypoints-dir", help="<dir>/<set>/img<i>.txt instead of detection")
    o.add_argument("--orientation", choices=("keypoints", "centroid"), default="keypoints")
    o.add_argument("-o", "--output", default="eval-oxford")
    _add_extract_flags(o)
    o.set_defaults(func=cmd_eval_oxford)

    p = sub.add_parser("bench", help="extraction time per descriptor")
    p.add_argument("image")
    p.add_argument("keypoints", nargs="?")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--random-keypoints", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    _add_extract_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write surrogate Brown/Oxford data built from sample photos")
    p.add_argument("kind", choices=("brown", "bikes", "leuven"))
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--pairs", type=int, default=50000)
    p.add_argument("--points", type=int, default=500, help="3-D points per source photo")
    p.add_argument("--strength", type=float, default=2.0)
    p.add_argument("--photo", default="camera")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except evaluation.EvaluationError as exc:
        print(f"latch: {exc}", file=sys.stderr)
        return 1
    except (UsageError, OSError, ValueError, datasets.DatasetError) as exc:
        print(f"latch: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
