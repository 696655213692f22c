import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latch.descriptor import (ArrangementSet, ConfigurationError, ExtractOptions, PairEntry, TripletArrangement,
                              decode_descriptors, default_arrangement, describe, describe_pairs, encode_descriptors,
                              extract, extract_pixel_variant, format_arrangement, max_offset, pack_bits, pair_bit,
                              parse_arrangement, random_pairs, triplet_bit, triplet_bits, unpack_bits)
from latch.detector import Keypoint, harris_detect
from latch.image import GrayImage, Window, correlate_separable, gaussian_kernel
from latch.matching import hamming

from oracles import scalar_descriptor, triplet_bit_loop

GOLDEN = Path(__file__).parent / "golden"


def _ramp(side=48):
    return Window.from_array(np.tile(np.arange(side, dtype=np.uint8), (side, 1)))


def smooth_texture(n=256, seed=0, sigma=2.0):
    rng = np.random.default_rng(seed)
    f = correlate_separable(rng.normal(0, 1, (n, n)), gaussian_kernel(sigma))
    f = (f - f.min()) / (f.max() - f.min())
    return GrayImage(np.rint(255 * f).astype(np.uint8))


def test_triplet_bit_ties_and_order():
    px = np.random.default_rng(0).integers(0, 256, (48, 48), dtype=np.uint8)
    px[24 - 3:24 + 4, 30 - 3:30 + 4] = px[24 - 3:24 + 4, 24 - 3:24 + 4]  # patch at (6, 0) copies the anchor
    win = Window.from_array(px)
    assert triplet_bit(win, TripletArrangement((0, 0), (6, 0), (-9, 5)), 7) == 0
    assert triplet_bit(win, TripletArrangement((0, 0), (-9, 5), (6, 0)), 7) == 1
    assert triplet_bit(_ramp(), TripletArrangement((0, 0), (4, 0), (2, 0)), 3) == 1


def test_pair_bit():
    ramp = _ramp()
    assert pair_bit(ramp, PairEntry((3, 3), (3, 3))) == 0
    assert pair_bit(Window.from_array(np.full((48, 48), 5, np.uint8)), PairEntry((1, 2), (-7, 0))) == 0
    assert pair_bit(ramp, PairEntry((5, 0), (-5, 0), 0.5, 0.5)) == 1
    assert pair_bit(ramp, PairEntry((5, 0), (-5, 0))) == 1


def test_pack_bits_convention():
    assert pack_bits([0] * 8) == b"\x00"
    assert pack_bits([1, 0, 0, 0, 0, 0, 0, 0]) == b"\x01"
    assert pack_bits([0, 0, 0, 0, 0, 0, 0, 1]) == b"\x80"
    with pytest.raises(ValueError):
        pack_bits([1, 0, 1])
    with pytest.raises(ValueError):
        pack_bits([0] * 8, T=16)


@given(st.lists(st.integers(0, 1), min_size=8, max_size=8).flatmap(
    lambda b: st.just(b) | st.lists(st.integers(0, 1), min_size=64, max_size=64)))
def test_pack_unpack(bits):
    packed = pack_bits(bits)
    assert len(packed) == len(bits) // 8
    assert unpack_bits(packed).tolist() == bits
    for t, b in enumerate(bits):
        assert (packed[t // 8] >> (t % 8)) & 1 == b


def test_arrangement_validation():
    assert max_offset(7, 48) == 20
    ok = [TripletArrangement((0, 0), (1, 0), (2, 0))] * 8
    ArrangementSet.from_triplets(ok)
    with pytest.raises(ConfigurationError):
        ArrangementSet.from_triplets(ok[:7])
    with pytest.raises(ConfigurationError):
        ArrangementSet.from_triplets([TripletArrangement((0, 0), (21, 0), (2, 0))] * 8)
    with pytest.raises(ConfigurationError):
        ArrangementSet.from_triplets([TripletArrangement((0, 0), (0, 0), (2, 0))] * 8)
    with pytest.raises(ConfigurationError):
        ArrangementSet.from_triplets(ok, patch_size=4)


def test_default_arrangement():
    arrs = default_arrangement()
    assert (arrs.patch_size, arrs.window_side) == (7, 48)
    assert len(arrs) >= 512
    assert np.abs(arrs.offsets).max() <= 20
    assert len({tuple(r) for r in arrs.offsets}) == len(arrs)


def test_constant_image_gives_zeros():
    img = GrayImage(np.full((100, 100), 131, np.uint8))
    kps = [Keypoint(50, 50), Keypoint(40, 60, 1.0)]
    for d in extract(img, kps, default_arrangement()):
        assert d.bits == bytes(32)
    arrs1 = _random_arrangement(1, 256, 0)
    for d in extract_pixel_variant(img, kps, arrs1, sigma=2.0):
        assert d.bits == bytes(32)


def test_golden_checkerboard():
    y, x = np.mgrid[0:128, 0:128]
    px = (((x // 8) + (y // 8)) % 2 * 255).astype(np.uint8)
    kp = Keypoint(64, 64)
    want = bytes.fromhex((GOLDEN / "checkerboard_descriptor.hex").read_text().strip())
    assert extract(GrayImage(px), [kp], default_arrangement())[0].bits == want
    assert scalar_descriptor(px, kp, default_arrangement().offsets[:256], 7) == want


def _random_arrangement(k, T, seed):
    from latch.learning import generate_candidates
    pool = generate_candidates(T, k, 48, seed)
    return ArrangementSet(pool.offsets, k, 48)


@pytest.mark.parametrize("k", [1, 3, 7, 9])
def test_extract_matches_scalar_oracle(k):
    img = smooth_texture(120, seed=k)
    arrs = _random_arrangement(k, 64, k)
    kps = [Keypoint(60, 60), Keypoint(55.4, 63.2, 2.1), Keypoint(64.9, 58.1, 5.5, 1.3)]
    opts = ExtractOptions(descriptor_bytes=8, patch_size=k, use_scale=True)
    got = extract(img, kps, arrs, opts)
    for d, kp in zip(got, kps):
        assert d.bits == scalar_descriptor(img.pixels, kp, arrs.offsets, k)


def test_triplet_bits_batch_matches_loop():
    rng = np.random.default_rng(5)
    wins = rng.integers(0, 256, (6, 48, 48), dtype=np.uint8)
    arrs = _random_arrangement(5, 16, 3)
    bits = triplet_bits(wins, arrs)
    for i in range(6):
        for t, row in enumerate(arrs.offsets):
            assert bits[i, t] == triplet_bit_loop(wins[i], row, 5)


def test_sizes_truncate_prefix():
    img = smooth_texture(160)
    kps = [Keypoint(80, 80, 0.3), Keypoint(70, 90, 4.0)]
    full = extract(img, kps, default_arrangement(), ExtractOptions(descriptor_bytes=64))
    for b in (4, 8, 16, 32):
        part = extract(img, kps, default_arrangement(), ExtractOptions(descriptor_bytes=b))
        assert [d.bits for d in part] == [d.bits[:b] for d in full]


def test_config_mismatch_and_skips():
    img = smooth_texture(120)
    with pytest.raises(ConfigurationError):
        describe(img, [Keypoint(60, 60)], default_arrangement(), ExtractOptions(patch_size=5))
    with pytest.raises(ConfigurationError):
        ExtractOptions(patch_size=7, sigma=2.0)
    with pytest.raises(ConfigurationError):
        ExtractOptions(descriptor_bytes=12)
    batch = describe(img, [Keypoint(60, 60), Keypoint(3, 60), Keypoint(60, 60, 0.785)], default_arrangement())
    assert len(batch) == 2 and batch.skipped == 1 and batch.skipped_indices == [1]
    empty = describe(img, [], default_arrangement())
    assert empty.bits.shape == (0, 32)


def test_pixel_variant_sigma_limit():
    img = smooth_texture(120)
    arrs1 = _random_arrangement(1, 64, 2)
    kps = [Keypoint(60, 60, 1.0)]
    plain = extract(img, kps, arrs1, ExtractOptions(descriptor_bytes=8, patch_size=1))
    assert extract_pixel_variant(img, kps, arrs1, sigma=None,
                                 opts=ExtractOptions(descriptor_bytes=8, patch_size=1)) == plain
    with pytest.raises(ConfigurationError):
        extract_pixel_variant(img, kps, default_arrangement())


def test_pair_baseline():
    img = smooth_texture(120)
    pairs = random_pairs(256, sigma=2.0, seed=1)
    b = describe_pairs(img, [Keypoint(60, 60), Keypoint(58, 61, 0.4)], pairs)
    assert b.bits.shape == (2, 32)
    assert describe_pairs(GrayImage(np.full((100, 100), 9, np.uint8)), [Keypoint(50, 50)], pairs).bits.sum() == 0


def test_determinism_runs_and_threads():
    img = smooth_texture(256, seed=4)
    kps = harris_detect(img, 500)
    arrs = default_arrangement()
    ref = describe(img, kps, arrs).bits
    assert np.array_equal(describe(img, kps, arrs).bits, ref)
    for t in (2, 3, 8):
        assert np.array_equal(describe(img, kps, arrs, ExtractOptions(threads=t)).bits, ref)


def quarter_turn_bit_changes(img: GrayImage, max_keypoints=300):
    """Per-keypoint Hamming distance between descriptors of an image and its 90-degree rotation."""
    arrs = default_arrangement()
    kps = harris_detect(img, max_keypoints)
    rot = GrayImage(np.rot90(img.pixels))
    w = img.width
    # np.rot90 sends (x, y) to (y, w - 1 - x), a -90 degree turn in image coordinates
    moved = [Keypoint(kp.y, w - 1 - kp.x, 0.0, kp.scale, kp.response).with_orientation(kp.orientation - math.pi / 2)
             for kp in kps]
    a = describe(img, kps, arrs)
    b = describe(rot, moved, arrs)
    keep_a = {kps.index(k) for k in a.keypoints}
    idx_b = {i for i in range(len(moved)) if i not in set(b.skipped_indices)}
    both = sorted(keep_a & idx_b)
    ra = {kps.index(k): row for k, row in zip(a.keypoints, a.bits)}
    rb = dict(zip(sorted(idx_b), b.bits))
    return np.array([hamming(ra[i], rb[i]) for i in both])


def test_rotation_covariance():
    d = quarter_turn_bit_changes(smooth_texture(256, seed=9))
    assert len(d) >= 100
    assert np.median(d) <= 4
    assert d.max() <= 8


def test_arrangement_file_round_trip(tmp_path):
    arrs = default_arrangement()
    text = format_arrangement(arrs)
    again = parse_arrangement(text)
    assert again == arrs and format_arrangement(again) == text
    assert parse_arrangement("# c\nLATCH-ARR 1 8 3 48\n" + "1 2 3 4 5 6 # x\n" * 8).patch_size == 3
    with pytest.raises(ConfigurationError):
        parse_arrangement("LATCH-ARR 1 16 7 48\n" + "1 2 3 4 5 6\n" * 8)
    with pytest.raises(ConfigurationError):
        parse_arrangement("LATCH-ARR 2 8 7 48\n" + "1 2 3 4 5 6\n" * 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 20), st.sampled_from([4, 8, 32, 64]), st.integers(0, 2**32 - 1))
def test_descriptor_file_round_trip(n, nbytes, seed):
    rng = np.random.default_rng(seed)
    kps = [Keypoint(float(np.float32(x)), float(np.float32(y)), float(np.float32(t)), float(np.float32(s)))
           for x, y, t, s in rng.uniform(0, 6, (n, 4))]
    bits = rng.integers(0, 256, (n, nbytes), dtype=np.uint8)
    data = encode_descriptors(kps, bits)
    back = decode_descriptors(data)
    assert back.keypoints == kps and np.array_equal(back.bits, bits)
    assert encode_descriptors(back.keypoints, back.bits) == data
    with pytest.raises(ValueError):
        decode_descriptors(data[:-1] if n else b"XXXXXXXX" + data[8:])
