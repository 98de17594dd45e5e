
import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from tdsr.errors import ContractError, ShapeError
from tdsr.losses import (BASE_COMPONENTS, COMPONENTS, LossBreakdown, circular_distance,
                         compute_losses, consistency_loss, coordinate_keypoint_loss, feature_l1,
                         hue_loss, hue_mask_degenerate, msip_loss, mse_loss, total_loss)
from tdsr.supervisors import HueMap, KeypointSet
from tdsr import resample
from tdsr.generator import to_signed, to_unit
from tdsr.fixtures import generate_page, make_pair


def loop_mse(a, b):
    flat_a, flat_b = a.reshape(-1).tolist(), b.reshape(-1).tolist()
    return sum((x - y) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)


def loop_l1(a, b):
    flat_a, flat_b = a.reshape(-1).tolist(), b.reshape(-1).tolist()
    return sum(abs(x - y) for x, y in zip(flat_a, flat_b)) / len(flat_a)


def keypoints(desc, k_top=None):
    """KeypointSet from a {scale: (B, K, D)} descriptor dict."""
    scales = tuple(desc)
    k = next(iter(desc.values())).shape[1]
    z = {s: torch.zeros(d.shape[0], k, 2, dtype=torch.long) for s, d in desc.items()}
    v = {s: torch.ones(d.shape[0], k, dtype=torch.bool) for s, d in desc.items()}
    sc = {s: torch.zeros(d.shape[0], k) for s, d in desc.items()}
    return KeypointSet(scales, z, z, sc, v, desc, k_top or k)


# ---------------------------------------------------------------- pixel losses

def test_mse_examples():
    a = torch.rand(3, 4, 4, dtype=torch.float64)
    assert mse_loss(a, a).item() == 0.0
    assert mse_loss(a, a + 0.5).item() == pytest.approx(0.25, abs=1e-15)
    b = torch.rand(3, 4, 4, dtype=torch.float64)
    assert mse_loss(a, b).item() == pytest.approx(loop_mse(a, b), abs=1e-12)
    with pytest.raises(ShapeError):
        mse_loss(a, b[:, :3])


def test_feature_l1_examples():
    a = torch.randn(5, 7, dtype=torch.float64)
    assert feature_l1(a, a).item() == 0.0
    assert feature_l1(a, a + 2).item() == pytest.approx(2.0, abs=1e-12)
    b = torch.randn(5, 7, dtype=torch.float64)
    assert feature_l1(a, b).item() == pytest.approx(loop_l1(a, b), abs=1e-12)
    assert feature_l1(a, b).item() == feature_l1(b, a).item()
    with pytest.raises(ShapeError):
        feature_l1(a, b.T)


def test_consistency_examples():
    c = torch.full((3, 8, 8), 0.3, dtype=torch.float64)
    assert consistency_loss(c, torch.full((3, 2, 2), 0.3, dtype=torch.float64)).item() == pytest.approx(0, abs=1e-24)
    one = torch.ones(3, 8, 8, dtype=torch.float64)
    assert consistency_loss(one, torch.zeros(3, 2, 2, dtype=torch.float64)).item() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ShapeError):
        consistency_loss(one, torch.zeros(3, 3, 2, dtype=torch.float64))


def test_consistency_matches_pil_route():
    yy, xx = np.mgrid[0:8, 0:8] / 7.0
    sr = np.stack([xx, yy, (xx * yy) ** 0.5])
    lr = np.random.default_rng(3).random((3, 2, 2))
    down = np.stack([np.asarray(Image.fromarray(ch.astype(np.float32), "F").resize((2, 2), Image.BICUBIC))
                     for ch in sr])
    ref = float(np.mean((down - lr) ** 2))
    got = consistency_loss(torch.from_numpy(sr), torch.from_numpy(lr)).item()
    assert got == pytest.approx(ref, abs=1e-6)


# ---------------------------------------------------------------- keypoint losses

def test_msip_examples():
    d = torch.rand(1, 3, 4)
    assert msip_loss(keypoints({1: d}), keypoints({1: d.clone()})).item() == 0.0
    a = torch.zeros(1, 1, 5)
    b = a.clone(); b[0, 0, 2] = 1.0
    assert msip_loss(keypoints({1: a}), keypoints({1: b})).item() == pytest.approx(1.0)


def test_msip_hand_summed_two_scales():
    a = {1: torch.tensor([[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]]),
         2: torch.tensor([[[0.0, 0.0], [3.0, 0.0], [1.0, -1.0]]])}
    b = {1: torch.tensor([[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]]),
         2: torch.tensor([[[1.0, 1.0], [3.0, 1.0], [0.0, 0.0]]])}
    # squared distances: scale1 1, 4, 0 ; scale2 2, 1, 2 -> 10 / (2 * 3)
    assert msip_loss(keypoints(a), keypoints(b)).item() == pytest.approx(10 / 6)


def test_msip_scale_mismatch():
    with pytest.raises(ContractError):
        msip_loss(keypoints({1: torch.zeros(1, 2, 3)}), keypoints({2: torch.zeros(1, 2, 3)}))


def test_coordinate_form_zero_on_identity():
    kp = keypoints({1: torch.zeros(1, 2, 3)})
    assert float(coordinate_keypoint_loss(kp, kp)) == 0.0


# ---------------------------------------------------------------- hue

def hue_map(h, m):
    return HueMap(torch.tensor(h, dtype=torch.float64), torch.tensor(m, dtype=torch.float64))


def test_hue_examples():
    h = hue_map([[0.2, 0.7]], [[1.0, 0.5]])
    assert hue_loss(h, h).item() == 0.0
    assert hue_loss(hue_map([[0.95]], [[1.0]]), hue_map([[0.05]], [[1.0]])).item() == pytest.approx(0.1)
    gray = hue_map([[0.0, 0.0]], [[0.0, 0.0]])
    assert hue_loss(hue_map([[0.3, 0.6]], [[1.0, 1.0]]), gray).item() == 0.0
    assert hue_mask_degenerate(gray)
    with pytest.raises(ShapeError):
        hue_loss(hue_map([[0.1]], [[1.0]]), h)


def test_hue_mask_weighting():
    sr = hue_map([[0.1, 0.1]], [[1.0, 1.0]])
    hr = hue_map([[0.2, 0.5]], [[1.0, 0.25]])
    expected = (1.0 * 0.1 + 0.25 * 0.4) / 1.25
    assert hue_loss(sr, hr).item() == pytest.approx(expected)


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True))
def test_circular_distance_properties(a, b):
    d = circular_distance(torch.tensor(a, dtype=torch.float64), torch.tensor(b, dtype=torch.float64)).item()
    assert 0.0 <= d <= 0.5 + 1e-12
    assert d == pytest.approx(circular_distance(torch.tensor(b, dtype=torch.float64),
                                                torch.tensor(a, dtype=torch.float64)).item())


# ---------------------------------------------------------------- aggregation

def test_total_loss_examples():
    two = LossBreakdown({"mse": 0.5, "cons": 0.25}, {"mse", "cons"})
    assert total_loss(two, {"mse": 1.2, "cons": 0.8}) == pytest.approx(0.8)
    assert total_loss(two, {"mse": 1.0, "cons": 1.0}) == pytest.approx(0.75)
    zero = LossBreakdown({c: 0.0 for c in COMPONENTS})
    assert total_loss(zero, {c: 1.0 for c in COMPONENTS}) == 0.0
    with pytest.raises(ContractError):
        total_loss(two, {"mse": 1.0})
    with pytest.raises(ContractError):
        total_loss(two, {"mse": 1.0, "cons": 1.0, "hue": 1.0})


def test_disabled_components_are_zero():
    b = LossBreakdown({"mse": 0.3, "hue": 0.7}, {"mse"})
    assert b["hue"] == 0.0 and b.active() == {"mse": 0.3}


@given(st.lists(st.floats(0, 10), min_size=3, max_size=3), st.lists(st.floats(0.01, 5), min_size=3, max_size=3),
       st.floats(0.1, 3))
def test_total_loss_is_linear(losses, lam, c):
    names = ("mse", "cons", "ctpn_deep")
    b = LossBreakdown(dict(zip(names, losses)), names)
    w = dict(zip(names, lam))
    scaled = dict(w, mse=w["mse"] * c)
    lhs = total_loss(b, scaled)
    rhs = total_loss(b, w) + (c - 1) * w["mse"] * losses[0]
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- full evaluation

def desk_pair(seed=0, size=64):
    pair = make_pair(generate_page(seed, size=size), (0, 0))
    return (torch.from_numpy(pair.lr).float()[None], torch.from_numpy(pair.hr).float()[None])


def identity_case(seed=0, size=64):
    """HR quantised to k/256 so the signed/unit round trip is exact; LR = D(HR)."""
    _, hr = desk_pair(seed, size)
    hr = torch.round(hr * 256) / 256
    sr = to_signed(hr)
    assert torch.equal(to_unit(sr), hr)
    return sr, hr, resample.downsample(hr)


def test_identity_case_all_zero(bundle):
    sr, hr, lr = identity_case()
    b = compute_losses(sr, hr, lr, bundle, COMPONENTS)
    for c in COMPONENTS:
        assert float(b[c]) == 0.0, c


image_batches = arrays(np.float64, (1, 3, 32, 32), elements=st.floats(0, 1))
_BUNDLE = None


def _bundle():
    global _BUNDLE
    if _BUNDLE is None:
        from tdsr.supervisors import surrogate_bundle
        _BUNDLE = surrogate_bundle(0).to(torch.float64)
    return _BUNDLE


@settings(max_examples=25, deadline=None)
@given(image_batches, image_batches, image_batches)
def test_non_negative_on_random_images(sr, hr, lr_src):
    sr_t, hr_t = torch.from_numpy(sr), torch.from_numpy(hr)
    lr = torch.from_numpy(lr_src[..., ::4, ::4].copy())
    b = compute_losses(to_signed(sr_t), hr_t, lr, _bundle(), COMPONENTS, k_top=8)
    for c in COMPONENTS:
        v = float(b[c])
        assert np.isfinite(v) and v >= 0.0, c


@pytest.mark.parametrize("enabled", [BASE_COMPONENTS, BASE_COMPONENTS + ("hue",), COMPONENTS])
def test_disabled_extractors_never_called(fresh_bundle, enabled):
    lr, hr = desk_pair()
    compute_losses(to_signed(hr), hr, lr, fresh_bundle, enabled, k_top=8)
    assert fresh_bundle.calls["crnn"] == (2 if "crnn" in enabled else 0)
    assert fresh_bundle.calls["keynet"] == (2 if "keynet" in enabled else 0)
    assert fresh_bundle.calls["hue"] == (2 if "hue" in enabled else 0)


def test_disabled_component_ignores_supervisor_output(fresh_bundle, monkeypatch):
    lr, hr = desk_pair()
    sr = to_signed(hr * 0.9 + 0.05)
    base = compute_losses(sr, hr, lr, fresh_bundle, BASE_COMPONENTS, k_top=8)
    real_crnn = fresh_bundle.crnn.forward

    def perturbed(image):
        out = real_crnn(image)
        out.sequence = out.sequence + 100.0
        return out
    monkeypatch.setattr(fresh_bundle.crnn, "forward", perturbed)
    again = compute_losses(sr, hr, lr, fresh_bundle, BASE_COMPONENTS, k_top=8)
    w = {c: 1.0 for c in BASE_COMPONENTS}
    assert float(total_loss(base, w)) == float(total_loss(again, w))
