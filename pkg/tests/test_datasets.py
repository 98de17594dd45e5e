import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from tdsr import resample
from tdsr.datasets import (PatchPair, RegisteredPair, ScanRecord, align_tiles_phase_correlation,
                           apply_translation, crop_to_ratio, estimate_translation, extract_patches,
                           patch_name, phase_correlation, read_image, read_manifest,
                           read_patch_store, roll_crop, simulate_lr, split_dataset, translate,
                           write_manifest, write_patch_store, write_png)
from tdsr.errors import ConfigError, DataIntegrityError, InputTooSmallError, ShapeError
from tdsr.fixtures import generate_page, make_pair, make_scan_pair
from tdsr.losses import downsample


def exhaustive_translation(lr, hr, margin=32, radius=10):
    """Oracle: MSE of every integer shift in the window, argmin."""
    up = resample.upsample(lr)
    H, W = hr.shape[-2:]
    ref = hr[..., margin:H - margin, margin:W - margin]
    best = None
    for dy, dx in itertools.product(range(-radius, radius + 1), repeat=2):
        moved = up[..., margin - dy:H - margin - dy, margin - dx:W - margin - dx]
        cost = float(np.mean((moved - ref) ** 2))
        if best is None or cost < best[0]:
            best = (cost, (dy, dx))
    return best[1]


# ---------------------------------------------------------------- geometry

def test_translate_convention():
    img = np.arange(12.0).reshape(1, 3, 4)
    out = translate(img, (1, -1))
    assert out[0, 1, 0] == img[0, 0, 1]
    assert out[0, 0, 0] == img[0, 0, 1]          # edge replication
    assert np.array_equal(translate(img, (0, 0)), img)


def test_crop_to_ratio():
    lr, hr = crop_to_ratio(np.zeros((3, 10, 12)), np.zeros((3, 41, 45)))
    assert lr.shape == (3, 10, 11) and hr.shape == (3, 40, 44)


def test_simulate_lr_examples():
    c = np.full((3, 8, 8), 0.4)
    out = simulate_lr(c)
    assert out.shape == (3, 2, 2)
    np.testing.assert_allclose(out, 0.4, atol=1e-12)
    with pytest.raises(ShapeError):
        simulate_lr(np.zeros((3, 9, 8)))


def test_simulate_lr_ramp_matches_pil():
    ramp = np.tile(np.linspace(0.1, 0.9, 64), (3, 16, 1))
    pil = np.stack([np.asarray(Image.fromarray(ch.astype(np.float32), "F").resize((16, 4), Image.BICUBIC))
                    for ch in ramp])
    np.testing.assert_allclose(simulate_lr(ramp), pil, atol=1e-6)


def test_simulate_lr_bit_identical_to_consistency_downsampler():
    import torch
    hr = generate_page(4, size=64).hr
    assert np.array_equal(simulate_lr(hr), np.clip(downsample(torch.from_numpy(hr)).numpy(), 0, 1))


def test_simulate_lr_stays_in_unit_range():
    hr = np.zeros((3, 64, 64)); hr[:, :, 32:] = 1.0   # hard edge: cubic overshoot
    out = simulate_lr(hr)
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------- registration

def test_self_alignment_is_zero():
    page = generate_page(11)
    est = estimate_translation(simulate_lr(page.hr), page.hr)
    assert est.shift == (0, 0)


def test_known_shift_recovered_and_matches_exhaustive_oracle():
    page = generate_page(12)
    pair = make_pair(page, (3, -2))          # LR content shifted by (+3, -2)
    est = estimate_translation(pair.lr, pair.hr)
    assert est.shift == (-3, 2)
    assert est.shift == exhaustive_translation(pair.lr, pair.hr)


@pytest.mark.parametrize("seed", range(4))
def test_scan_like_pairs_recovered(seed):
    rng = np.random.default_rng(seed)
    shift = tuple(int(v) for v in rng.integers(-8, 9, 2))
    pair = make_scan_pair(generate_page(100 + seed), shift, seed)
    est = estimate_translation(pair.lr, pair.hr)
    assert max(abs(a - b) for a, b in zip(est.shift, pair.translation)) <= 1


def test_registration_deterministic_and_validated():
    pair = make_pair(generate_page(13), (1, 1))
    a = estimate_translation(pair.lr, pair.hr, seed=5)
    b = estimate_translation(pair.lr, pair.hr, seed=5)
    assert a == b
    with pytest.raises(ConfigError):
        estimate_translation(pair.lr, pair.hr, radius=0)
    with pytest.raises(ConfigError):
        estimate_translation(pair.lr, pair.hr, margin=8, radius=16)
    with pytest.raises(InputTooSmallError):
        estimate_translation(pair.lr[..., :16, :16], pair.hr[..., :64, :64], margin=32, radius=4)


def test_roll_crop_examples():
    img = np.arange(20.0).reshape(1, 4, 5)
    out, origin = roll_crop(img, (1, -2))
    assert origin == (1, 0) and out.shape == (1, 3, 3)
    assert out[0, 0, 0] == img[0, 0, 2]
    with pytest.raises(ShapeError):
        roll_crop(img, (4, 0))


def test_apply_translation_zero_is_identity():
    lr, hr = np.random.default_rng(0).random((3, 20, 24)), np.random.default_rng(1).random((3, 80, 96))
    out = apply_translation(RegisteredPair(lr, hr, (0, 0)))
    assert np.array_equal(out.lr, lr) and np.array_equal(out.hr, hr) and out.aligned


def test_apply_translation_inverse_shifts_on_interior():
    lr = np.random.default_rng(0).random((3, 20, 20))
    hr = np.zeros((3, 80, 80))
    once = apply_translation(RegisteredPair(lr, hr, (4, 0)))        # one LR row down
    back = apply_translation(RegisteredPair(once.lr, once.hr, (-4, 0)))
    assert np.array_equal(back.lr, lr[:, 1:19, :])


def test_apply_translation_subpixel_ramp_matches_hand_arithmetic():
    yy, xx = np.mgrid[0:100, 0:100].astype(np.float64)
    lr = np.stack([0.003 * yy + 0.005 * xx] * 3)
    Y, X = np.mgrid[0:400, 0:400].astype(np.float64)
    hr = np.stack([Y, X, Y * 0])
    out = apply_translation(RegisteredPair(lr, hr, (-5, -1)))
    r0, c0 = int(out.hr[0, 0, 0]) // 4, int(out.hr[1, 0, 0]) // 4
    sy, sx = -5 / 4, -1 / 4
    oh, ow = out.lr.shape[-2:]
    vy, vx = np.mgrid[0:oh, 0:ow] + np.array([r0, c0])[:, None, None]
    # cubic interpolation reproduces a linear ramp exactly: out[v] = ramp(v - s)
    expected = 0.003 * (vy - sy) + 0.005 * (vx - sx)
    np.testing.assert_allclose(out.lr[0], expected, atol=1e-12)
    assert out.hr.shape[-2:] == (4 * oh, 4 * ow)


def test_apply_translation_oversized_shift():
    with pytest.raises(ShapeError):
        apply_translation(RegisteredPair(np.zeros((3, 4, 4)), np.zeros((3, 16, 16)), (16, 0)))


def test_alignment_improves_fit():
    pair = make_pair(generate_page(14), (4, -8))
    before = np.mean((resample.upsample(pair.lr) - pair.hr) ** 2)
    out = apply_translation(pair)
    after = np.mean((resample.upsample(out.lr) - out.hr) ** 2)
    page = generate_page(14)
    floor = np.mean((resample.upsample(simulate_lr(page.hr)) - page.hr) ** 2)
    assert after < before
    assert after == pytest.approx(floor, rel=0.15)


# ---------------------------------------------------------------- patches

def coord_pair(h, w):
    lr = np.broadcast_to(np.float32(0), (3, h, w))
    yy = np.broadcast_to(np.arange(4 * h, dtype=np.int32)[:, None], (4 * h, 4 * w))
    return RegisteredPair(lr, np.broadcast_to(yy, (3, 4 * h, 4 * w)))


def test_patch_examples():
    assert [p.origin for p in extract_patches(coord_pair(256, 256))] == [(0, 0)]
    assert sorted(p.origin for p in extract_patches(coord_pair(300, 300))) == [
        (0, 0), (0, 44), (44, 0), (44, 44)]
    assert len(extract_patches(coord_pair(512, 256))) == 2
    with pytest.raises(InputTooSmallError):
        extract_patches(coord_pair(255, 300))
    with pytest.raises(ShapeError):
        extract_patches(RegisteredPair(np.zeros((3, 8, 8)), np.zeros((3, 30, 32))), size=4)


@settings(max_examples=60, deadline=None)
@given(st.integers(16, 60), st.integers(16, 60))
def test_patch_tiling_coverage_small(h, w):
    pair = coord_pair(h, w)
    patches = extract_patches(pair, size=16)
    cover = np.zeros((h, w), dtype=int)
    for p in patches:
        y, x = p.origin
        assert p.lr_patch.shape == (3, 16, 16) and p.hr_patch.shape == (3, 64, 64)
        assert p.hr_origin == (4 * y, 4 * x)
        assert p.hr_patch[0, 0, 0] == 4 * y
        cover[y:y + 16, x:x + 16] += 1
    assert (cover >= 1).all()
    assert len({p.origin for p in patches}) == len(patches)


# ---------------------------------------------------------------- splits

def records(pages, shifts, dpis=(75, 300), corpus="bulletin"):
    return [ScanRecord(f"{corpus}{p}_{d}_{s}.png", f"{corpus}{p}", d, s, corpus)
            for p in range(pages) for s in shifts for d in dpis]


def test_split_counts_per_resolution():
    part = split_dataset(records(32, range(9)))
    for dpi in (75, 300):
        assert sum(r.dpi == dpi for r in part.val) == 32
        assert sum(r.dpi == dpi for r in part.train) == 256
    assert part.test == []


def test_split_degenerate_page_warns():
    with pytest.warns(UserWarning, match="missing shift"):
        part = split_dataset(records(1, (0, 1), dpis=(75,)))
    assert len(part.val) == 1 and len(part.train) == 1


def test_split_test_corpora_and_duplicates():
    recs = records(2, range(9)) + records(1, (0, 3), corpus="leaflet")
    part = split_dataset(recs)
    assert len(part.test) == 4 and all(r.corpus == "leaflet" for r in part.test)
    with pytest.raises(DataIntegrityError):
        split_dataset(records(1, range(9)) + records(1, (4,)))


def test_split_is_order_independent():
    recs = records(3, range(9))
    a = split_dataset(recs)
    b = split_dataset(list(reversed(recs)))
    assert [r.key for r in a.train] == [r.key for r in b.train]


def test_scan_record_validation():
    with pytest.raises(DataIntegrityError):
        ScanRecord("x.png", "p", 100, 0)
    with pytest.raises(DataIntegrityError):
        ScanRecord("x.png", "p", 300, 9)


# ---------------------------------------------------------------- phase correlation

def test_phase_correlation_global_shift():
    ref = generate_page(20, size=512).hr
    moved = translate(ref, (7, 4))
    assert phase_correlation(ref, moved)[0] == (-7, -4)
    out, report = align_tiles_phase_correlation(moved, ref, tile=256)
    assert all(r.shift == (-7, -4) for r in report if not r.flagged)
    assert len(report) == 9
    np.testing.assert_allclose(out[:, 64:-64, 64:-64], ref[:, 64:-64, 64:-64], atol=1e-12)


def test_phase_correlation_self_and_flat_tiles():
    ref = generate_page(21, size=256).hr.copy()
    ref[:, :128, :128] = 0.0                 # all-black tile
    out, report = align_tiles_phase_correlation(ref, ref, tile=128)
    flagged = [r for r in report if r.flagged]
    assert flagged and flagged[0].origin == (0, 0)
    assert all(r.shift == (0, 0) for r in report)
    np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------- I/O

def test_read_image_bit_depths(tmp_path):
    a8 = (np.arange(64, dtype=np.uint8) * 4).reshape(8, 8)
    Image.fromarray(a8).save(tmp_path / "g8.png")
    a16 = (np.arange(64, dtype=np.uint16) * 1000).reshape(8, 8)
    Image.fromarray(a16).save(tmp_path / "g16.png")
    Image.fromarray(a16).save(tmp_path / "g16.tif")
    g8 = read_image(tmp_path / "g8.png")
    assert g8.shape == (3, 8, 8) and g8[0, 0, 1] == pytest.approx(4 / 255)
    for name in ("g16.png", "g16.tif"):
        g16 = read_image(tmp_path / name)
        assert g16[0, 0, 1] == pytest.approx(1000 / 65535)
    rgb = np.random.default_rng(0).random((3, 5, 6))
    write_png(tmp_path / "rgb.png", rgb)
    np.testing.assert_allclose(read_image(tmp_path / "rgb.png"), rgb, atol=0.5 / 255 + 1e-12)


def test_manifest_roundtrip(tmp_path):
    recs = [ScanRecord(str(tmp_path / "a_75_0.png"), "a", 75, 0),
            ScanRecord(str(tmp_path / "a_300_0.png"), "a", 300, 0, "leaflet")]
    write_manifest(tmp_path / "m.csv", recs)
    assert "a_75_0.png,a,75,0,bulletin" in (tmp_path / "m.csv").read_text()
    back = read_manifest(tmp_path / "m.csv")
    assert [r.key for r in back] == [r.key for r in recs]
    assert [r.path for r in back] == [r.path for r in recs]
    (tmp_path / "bad.csv").write_text("path,dpi\nx,75\n")
    with pytest.raises(DataIntegrityError):
        read_manifest(tmp_path / "bad.csv")


def test_patch_store_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    meta = {"page": "p7", "dpi": 75, "shift": 3}
    q = lambda a: np.round(a * 255) / 255
    patches = [PatchPair(q(rng.random((3, 4, 4))), q(rng.random((3, 16, 16))), (0, 4), "train", "real", meta),
               PatchPair(q(rng.random((3, 4, 4))), q(rng.random((3, 16, 16))), (0, 4), "val", "simulated", meta)]
    write_patch_store(tmp_path, patches)
    assert (tmp_path / "real" / patch_name("p7", 75, 3, 0, 4, "lr")).exists()
    assert patch_name("p7", 75, 3, 0, 4, "hr") == "p7_75_3_0_4_hr.png"
    back = read_patch_store(tmp_path)
    assert len(back) == 2
    np.testing.assert_allclose(back[0].lr_patch, patches[0].lr_patch, atol=1e-12)
    assert [p.source for p in read_patch_store(tmp_path, source="simulated")] == ["simulated"]
    assert [p.split for p in read_patch_store(tmp_path, split="train")] == ["train"]
    with pytest.raises(FileNotFoundError):
        read_patch_store(tmp_path / "nowhere")
