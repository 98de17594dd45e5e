"""Loss components and their weighted aggregation.

All image losses take unit-range tensors; generator outputs are mapped from
[-1, 1] before evaluation. Norms are mean-reduced per element, except the
keypoint-descriptor loss, which sums squared distances per keypoint and
normalises by the number of (scale, keypoint) slots.
"""
from dataclasses import dataclass, field

import torch

from . import resample
from .errors import ContractError, ShapeError
from .generator import to_unit
from .supervisors import KEYNET_K_TOP

COMPONENTS = ("mse", "cons", "ctpn_deep", "ctpn_clss", "ctpn_reg", "crnn", "keynet", "hue")
BASE_COMPONENTS = ("mse", "cons", "ctpn_deep", "ctpn_clss", "ctpn_reg")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(a, b):
    _same_shape(a, b)
    return torch.mean((a - b) ** 2)


def feature_l1(fa, fb):
    _same_shape(fa, fb)
    return torch.mean(torch.abs(fa - fb))


def downsample(image, scale=4):
    return resample.downsample(image, scale)


def consistency_loss(sr, lr, scale=4):
    """MSE between the bicubically downsampled SR image and the LR input."""
    if sr.shape[:-2] != lr.shape[:-2] or sr.shape[-2:] != tuple(scale * s for s in lr.shape[-2:]):
        raise ShapeError(f"SR {tuple(sr.shape)} is not {scale}x LR {tuple(lr.shape)}")
    return torch.mean((downsample(sr, scale) - lr) ** 2)


def msip_loss(kp_sr, kp_hr):
    """Sum of squared descriptor distances over scales and keypoints / (|S| * K_top).

    Padding slots carry zero descriptors on both sides and add nothing.
    """
    if tuple(kp_sr.scales) != tuple(kp_hr.scales) or kp_sr.k_top != kp_hr.k_top:
        raise ContractError("keypoint sets differ in scales or K_top")
    total = 0.0
    for s in kp_hr.scales:
        a, b = kp_sr.descriptors[s], kp_hr.descriptors[s]
        if a.shape != b.shape:
            raise ContractError(f"descriptor shapes differ at scale {s}")
        # mean over the batch axis, sum over keypoints and descriptor dims
        total = total + ((a - b) ** 2).sum(dim=(-1, -2)).mean()
    return total / (len(kp_hr.scales) * kp_hr.k_top)


def coordinate_keypoint_loss(kp_sr, kp_hr):
    """Squared distance between rank-matched keypoint coordinates (not differentiable)."""
    if tuple(kp_sr.scales) != tuple(kp_hr.scales) or kp_sr.k_top != kp_hr.k_top:
        raise ContractError("keypoint sets differ in scales or K_top")
    total = 0.0
    for s in kp_hr.scales:
        both = (kp_sr.valid[s] & kp_hr.valid[s])[..., None]
        d = (kp_sr.coords[s] - kp_hr.coords[s]).double() * both
        total = total + (d ** 2).sum(dim=(-1, -2)).mean()
    return total / (len(kp_hr.scales) * kp_hr.k_top)


def circular_distance(h1, h2):
    d = torch.abs(h1 - h2)
    return torch.minimum(d, 1.0 - d)


def hue_loss(h_sr, h_hr):
    """Saturation-weighted mean circular hue distance (HR saturation as the mask)."""
    _same_shape(h_sr.hue, h_hr.hue)
    mask = h_hr.saturation_mask
    denom = mask.sum()
    if float(denom) == 0.0:
        return torch.zeros((), dtype=h_sr.hue.dtype, device=h_sr.hue.device)
    return (mask * circular_distance(h_sr.hue, h_hr.hue)).sum() / denom


def hue_mask_degenerate(h_hr):
    return float(h_hr.saturation_mask.sum()) == 0.0


@dataclass
class LossBreakdown:
    """Named loss scalars; disabled components are exactly zero."""
    values: dict
    enabled: frozenset = field(default_factory=lambda: frozenset(COMPONENTS))

    def __post_init__(self):
        self.enabled = frozenset(self.enabled)
        unknown = self.enabled - set(COMPONENTS)
        if unknown:
            raise ContractError(f"unknown components {sorted(unknown)}")
        vals = {}
        for name in COMPONENTS:
            v = self.values.get(name, 0.0)
            vals[name] = v if name in self.enabled else 0.0
        self.values = vals

    def __getitem__(self, name):
        return self.values[name]

    def active(self):
        return {k: self.values[k] for k in COMPONENTS if k in self.enabled}

    def floats(self):
        return {k: float(v) for k, v in self.values.items()}

    def detached(self):
        return LossBreakdown({k: float(v) for k, v in self.active().items()}, self.enabled)


def total_loss(breakdown, weights):
    """Sum of ``weights[i] * L_i`` over the enabled components."""
    if set(weights) != set(breakdown.enabled):
        raise ContractError(f"weights {sorted(weights)} do not match enabled "
                            f"components {sorted(breakdown.enabled)}")
    total = 0.0
    for name in COMPONENTS:
        if name in breakdown.enabled:
            total = total + weights[name] * breakdown.values[name]
    return total


def compute_losses(sr_signed, hr, lr, bundle, enabled=COMPONENTS, k_top=KEYNET_K_TOP,
                   keypoint_form="msip"):
    """Evaluate the enabled components for a batch.

    ``sr_signed`` is the generator output in [-1, 1]; ``hr`` and ``lr`` are unit
    range. Supervisor features of the HR side are computed without gradients;
    extractors of disabled components are never called.
    """
    enabled = frozenset(enabled)
    sr = to_unit(sr_signed)
    v = {}
    if "mse" in enabled:
        v["mse"] = mse_loss(sr, hr)
    if "cons" in enabled:
        v["cons"] = consistency_loss(sr, lr)
    if enabled & {"ctpn_deep", "ctpn_clss", "ctpn_reg"}:
        with torch.no_grad():
            f_hr = bundle.extract_ctpn(hr)
        f_sr = bundle.extract_ctpn(sr)
        if "ctpn_deep" in enabled:
            v["ctpn_deep"] = feature_l1(f_sr.deep, f_hr.deep)
        if "ctpn_clss" in enabled:
            v["ctpn_clss"] = feature_l1(f_sr.clss, f_hr.clss)
        if "ctpn_reg" in enabled:
            v["ctpn_reg"] = feature_l1(f_sr.reg, f_hr.reg)
    if "crnn" in enabled:
        with torch.no_grad():
            c_hr = bundle.extract_crnn_lines(hr)
        v["crnn"] = feature_l1(bundle.extract_crnn_lines(sr).sequence, c_hr.sequence)
    if "keynet" in enabled:
        with torch.no_grad():
            kp_hr = bundle.extract_keypoints(hr, k_top)
        if keypoint_form == "coordinate":
            v["keynet"] = coordinate_keypoint_loss(bundle.extract_keypoints(sr, k_top), kp_hr)
        else:
            v["keynet"] = msip_loss(bundle.describe_at(sr, kp_hr), kp_hr)
    if "hue" in enabled:
        with torch.no_grad():
            h_hr = bundle.extract_hue(hr)
        v["hue"] = hue_loss(bundle.extract_hue(sr), h_hr)
    return LossBreakdown(v, enabled)
