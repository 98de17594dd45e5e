"""Frozen proxy supervisors: CTPN-, CRNN- and Key.Net-shaped feature extractors.

The surrogates here are small, fixed-seed networks that honour the tensor
contracts of the real models (backbone strides, head layouts, sequence
shapes). Real pretrained weights can be loaded into the same modules from a
checkpoint archive; see :func:`load_supervisor`.
"""
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .errors import ChecksumError, ConfigError, InputContractError, InputTooSmallError, ShapeError

log = logging.getLogger(__name__)

CTPN_STRIDE = 16
CTPN_ANCHORS = 4
CRNN_HEIGHT = 16
KEYNET_SCALES = (1, 2, 4)
KEYNET_WINDOW = 5
KEYNET_K_TOP = 64
HARRIS_K = 0.04
RANGE_TOL = 1e-6


def _check_unit_rgb(image):
    if image.dim() != 4 or image.shape[1] != 3:
        raise InputContractError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
    with torch.no_grad():
        lo, hi = float(image.min()), float(image.max())
    if lo < -RANGE_TOL or hi > 1.0 + RANGE_TOL:
        raise InputContractError(f"supervisor input outside unit range: [{lo:.4g}, {hi:.4g}]")


def _batched(image):
    return image.unsqueeze(0) if image.dim() == 3 else image


def _freeze(module):
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _seeded_init(module, seed):
    gen = torch.Generator().manual_seed(seed)
    for name, p in sorted(module.named_parameters()):
        if p.dim() > 1:
            fan_in = p[0].numel()
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
        else:
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.05)
    return module


# --------------------------------------------------------------------------- CTPN

@dataclass
class CtpnFeatures:
    deep: torch.Tensor   # (B, C, H', W') pre-activation of the fc layer
    clss: torch.Tensor   # (B, A, 2, H', W') background/text logits
    reg: torch.Tensor    # (B, A, 2, H', W') vertical (dy, dh) offsets


class CtpnSurrogate(nn.Module):
    """Stride-16 conv backbone, 3x3 rpn conv, row-wise Bi-GRU, 1x1 fc and heads.

    ``smooth`` swaps ReLU for GELU so finite-difference checks through the
    frozen surrogate are not spoiled by activation kinks; pretrained VGG-style
    weights want ``smooth=False``.

    Anchors: each H'xW' cell holds ``anchors`` vertically stacked anchors of
    width ``stride`` and height ``anchor_height``; centres are spaced
    ``stride / anchors`` apart.
    """

    def __init__(self, seed=1, widths=(16, 32, 48, 64), mid=64, hidden=32,
                 anchors=CTPN_ANCHORS, anchor_height=8.0, smooth=True):
        super().__init__()
        self.smooth = smooth
        self.act = F.gelu if smooth else F.relu
        layers, cin = [], 3
        for w in widths:
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1), nn.GELU() if smooth else nn.ReLU()]
            cin = w
        self.backbone = nn.Sequential(*layers)
        self.stride = 2 ** len(widths)
        self.rpn = nn.Conv2d(cin, mid, 3, padding=1)
        self.gru = nn.GRU(mid, hidden, batch_first=True, bidirectional=True)
        self.fc = nn.Conv2d(2 * hidden, mid, 1)
        self.clss = nn.Conv2d(mid, 2 * anchors, 1)
        self.reg = nn.Conv2d(mid, 2 * anchors, 1)
        self.anchors = anchors
        self.anchor_height = float(anchor_height)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        _seeded_init(self, seed)

    def anchor_centers(self):
        step = self.stride / self.anchors
        return [(a + 0.5) * step for a in range(self.anchors)]

    def fc_features(self, image):
        x = (image - self.mean) / self.std
        x = self.act(self.rpn(self.backbone(x)))
        b, c, h, w = x.shape
        rows = x.permute(0, 2, 3, 1).reshape(b * h, w, c)
        seq, _ = self.gru(rows)
        seq = seq.reshape(b, h, w, -1).permute(0, 3, 1, 2)
        return self.fc(seq)

    def heads(self, deep):
        act = self.act(deep)
        b, _, h, w = deep.shape
        clss = self.clss(act).reshape(b, self.anchors, 2, h, w)
        reg = self.reg(act).reshape(b, self.anchors, 2, h, w)
        return clss, reg

    def forward(self, image):
        image = _batched(image)
        _check_unit_rgb(image)
        if image.shape[-2] < self.stride or image.shape[-1] < self.stride:
            raise InputTooSmallError(
                f"CTPN needs at least {self.stride}x{self.stride}, got {tuple(image.shape[-2:])}")
        deep = self.fc_features(image)
        clss, reg = self.heads(deep)
        return CtpnFeatures(deep, clss, reg)


def anchor_targets(ctpn, boxes, height, width):
    """Per-anchor text labels and (dy, dh) targets for ground-truth line boxes.

    An anchor is positive if its column overlaps a box by at least half the
    column width and its vertical IoU with that box is >= 0.5.
    """
    s = ctpn.stride
    gh, gw = -(-height // s), -(-width // s)
    labels = np.zeros((ctpn.anchors, gh, gw), dtype=bool)
    reg = np.zeros((ctpn.anchors, 2, gh, gw))
    ah = ctpn.anchor_height
    centers = ctpn.anchor_centers()
    for x0, y0, x1, y1 in boxes:
        bc, bh = 0.5 * (y0 + y1), (y1 - y0)
        for j in range(gw):
            if min(x1, (j + 1) * s) - max(x0, j * s) < s / 2:
                continue
            for i in range(gh):
                for a, c in enumerate(centers):
                    cy = i * s + c
                    lo, hi = cy - ah / 2, cy + ah / 2
                    inter = min(hi, y1) - max(lo, y0)
                    if inter <= 0:
                        continue
                    if inter / (ah + bh - inter) >= 0.5:
                        labels[a, i, j] = True
                        reg[a, 0, i, j] = (bc - cy) / ah
                        reg[a, 1, i, j] = np.log(bh / ah)
    return labels, reg


def calibrate_ctpn(ctpn, pages, ridge=1e-1, margin=3.0):
    """Fit the 1x1 classification/regression heads by ridge regression.

    ``pages`` is a list of ``(image (3,H,W) unit tensor, boxes)``. Only the two
    head convolutions change; the backbone keeps its seeded weights.
    """
    feats, ys_cls, ys_reg, masks = [], [], [], []
    with torch.no_grad():
        for image, boxes in pages:
            deep = ctpn.fc_features(_batched(image).float())
            act = ctpn.act(deep)[0].double()                       # (C, h, w)
            labels, reg = anchor_targets(ctpn, boxes, image.shape[-2], image.shape[-1])
            c, h, w = act.shape
            feats.append(act.reshape(c, -1).T)
            ys_cls.append(torch.from_numpy(labels.reshape(ctpn.anchors, -1).T.astype(np.float64)))
            ys_reg.append(torch.from_numpy(reg.reshape(ctpn.anchors * 2, -1).T))
            masks.append(torch.from_numpy(labels.reshape(ctpn.anchors, -1).T))
    x = torch.cat(feats)
    x = torch.cat([x, torch.ones(len(x), 1, dtype=x.dtype)], dim=1)
    y = torch.cat(ys_cls)
    eye = torch.eye(x.shape[1], dtype=x.dtype) * ridge
    # Class weighting keeps the rare positive anchors from being swamped.
    pos_frac = float(y.mean()) if float(y.mean()) > 0 else 1.0
    w_cls = []
    for a in range(ctpn.anchors):
        sw = torch.where(y[:, a] > 0, 0.5 / pos_frac, 0.5 / (1 - pos_frac))
        xw = x * sw[:, None]
        target = (y[:, a] * 2 - 1) * margin
        w_cls.append(torch.linalg.solve(x.T @ xw + eye, xw.T @ target))
    w_cls = torch.stack(w_cls)                                      # (A, C+1)
    yr = torch.cat(ys_reg)
    m = torch.cat(masks)
    w_reg = []
    for a in range(ctpn.anchors):
        for k in range(2):
            sel = m[:, a]
            xs = x[sel] if sel.any() else x[:1] * 0
            ta = yr[sel, 2 * a + k] if sel.any() else torch.zeros(1, dtype=x.dtype)
            w_reg.append(torch.linalg.solve(xs.T @ xs + eye, xs.T @ ta))
    w_reg = torch.stack(w_reg)                                      # (2A, C+1)
    with torch.no_grad():
        # clss channel layout is (anchor, [background, text]); logits are +-d/2.
        cw = torch.zeros_like(ctpn.clss.weight[:, :, 0, 0], dtype=torch.float64)
        cb = torch.zeros_like(ctpn.clss.bias, dtype=torch.float64)
        for a in range(ctpn.anchors):
            cw[2 * a] = -w_cls[a, :-1] / 2
            cw[2 * a + 1] = w_cls[a, :-1] / 2
            cb[2 * a] = -w_cls[a, -1] / 2
            cb[2 * a + 1] = w_cls[a, -1] / 2
        ctpn.clss.weight.copy_(cw[:, :, None, None].to(ctpn.clss.weight.dtype))
        ctpn.clss.bias.copy_(cb.to(ctpn.clss.bias.dtype))
        ctpn.reg.weight.copy_(w_reg[:, :-1, None, None].to(ctpn.reg.weight.dtype))
        ctpn.reg.bias.copy_(w_reg[:, -1].to(ctpn.reg.bias.dtype))
    return ctpn


# --------------------------------------------------------------------------- CRNN

@dataclass
class CrnnFeatures:
    sequence: torch.Tensor   # (B, W', d)


class CrnnSurrogate(nn.Module):
    """Conv/BN/activation/pool encoder collapsing height by 16 and width by 4, then 2 Bi-LSTMs.

    ``smooth`` selects GELU and average pooling; ``smooth=False`` gives the
    classic ReLU and max-pool stack.
    """

    def __init__(self, seed=2, widths=(16, 32, 32, 48), hidden=16, smooth=True):
        super().__init__()
        self.smooth = smooth
        pools = [(2, 2), (2, 2), (2, 1), (2, 1)]
        layers, cin = [], 3
        for w, p in zip(widths, pools):
            layers += [nn.Conv2d(cin, w, 3, padding=1), nn.BatchNorm2d(w),
                       nn.GELU() if smooth else nn.ReLU(),
                       nn.AvgPool2d(p, p) if smooth else nn.MaxPool2d(p, p)]
            cin = w
        self.encoder = nn.Sequential(*layers)
        self.height_factor = 2 ** len(pools)
        self.width_factor = 4
        self.lstm = nn.LSTM(cin, hidden, num_layers=2, batch_first=True, bidirectional=True)
        self.embedding = nn.Linear(2 * hidden, 37)   # character logits; unused by the losses
        _seeded_init(self, seed)
        gen = torch.Generator().manual_seed(seed + 1000)
        for m in self.encoder:
            if isinstance(m, nn.BatchNorm2d):
                m.weight.data.uniform_(0.8, 1.2, generator=gen)
                m.bias.data.zero_()
                m.running_mean.uniform_(-0.1, 0.1, generator=gen)
                m.running_var.uniform_(0.5, 1.5, generator=gen)

    def forward(self, image):
        image = _batched(image)
        _check_unit_rgb(image)
        h, w = image.shape[-2:]
        if h // self.height_factor != 1 or w < self.width_factor:
            raise InputTooSmallError(
                f"CRNN encoder collapses height by {self.height_factor}; "
                f"height {h} gives {h // self.height_factor}, need exactly 1")
        x = self.encoder(image * 2.0 - 1.0)
        seq = x.squeeze(2).permute(0, 2, 1)
        out, _ = self.lstm(seq)
        return CrnnFeatures(out)


def line_strips(image, height=CRNN_HEIGHT):
    """Cut ``(B, 3, H, W)`` into text-line strips of ``height`` rows.

    Strips tile the image top to bottom; the last one is clamped to end at
    the bottom border. Returns ``(B * n_strips, 3, height, W)``.
    """
    h = image.shape[-2]
    if h < height:
        raise InputTooSmallError(f"image height {h} below strip height {height}")
    starts = list(range(0, h - height + 1, height))
    if starts[-1] + height < h:
        starts.append(h - height)
    strips = torch.stack([image[..., s:s + height, :] for s in starts], dim=1)
    return strips.reshape(-1, image.shape[1], height, image.shape[-1])


# --------------------------------------------------------------------------- Key.Net

@dataclass
class KeypointSet:
    """Top-K keypoints per scale.

    For each scale: ``grid`` (B, K, 2) long indices (row, col) on that scale's
    grid, ``coords`` (B, K, 2) the same points in image pixels, ``scores``
    (B, K), ``valid`` (B, K) bool (False marks zero-response padding) and
    ``descriptors`` (B, K, D).
    """
    scales: tuple
    grid: dict
    coords: dict
    scores: dict
    valid: dict
    descriptors: dict
    k_top: int

    def padded(self):
        return {s: ~v for s, v in self.valid.items()}


class KeynetSurrogate(nn.Module):
    """Handcrafted-filter keypoint detector with gradient-window descriptors.

    Per scale the luma image is box-downsampled; Sobel derivatives give the
    gradient maps, a Harris measure on the 3x3-smoothed structure tensor gives
    the response, and a keypoint's descriptor is the (gx, gy) window of side
    ``window`` around it.
    """

    def __init__(self, scales=KEYNET_SCALES, window=KEYNET_WINDOW):
        super().__init__()
        self.scales = tuple(scales)
        self.window = window
        sobel = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
        self.register_buffer("sobel", torch.stack([sobel, sobel.T]).unsqueeze(1))
        self.register_buffer("smooth", torch.full((1, 1, 3, 3), 1.0 / 9.0))
        self.register_buffer("luma", torch.tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1))

    @property
    def border(self):
        return self.window // 2 + 1

    def min_size(self):
        return max(self.scales) * (2 * self.border + 1)

    def _check(self, image):
        image = _batched(image)
        _check_unit_rgb(image)
        if min(image.shape[-2:]) < self.min_size():
            raise InputTooSmallError(
                f"Key.Net surrogate needs >= {self.min_size()} px, got {tuple(image.shape[-2:])}")
        return image

    def gradients(self, image, s):
        gray = (image * self.luma).sum(1, keepdim=True)
        if s > 1:
            gray = F.avg_pool2d(gray, s)
        return F.conv2d(F.pad(gray, (1, 1, 1, 1), mode="replicate"), self.sobel.to(gray.dtype))

    def response(self, grads):
        gx, gy = grads[:, :1], grads[:, 1:]
        k = self.smooth.to(grads.dtype)
        sxx = F.conv2d(gx * gx, k, padding=1)
        syy = F.conv2d(gy * gy, k, padding=1)
        sxy = F.conv2d(gx * gy, k, padding=1)
        return (sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2)[:, 0]

    def describe(self, grads, grid):
        """Gather ``(B, K, 2*window^2)`` descriptors at ``grid`` positions."""
        b, _, h, w = grads.shape
        r = self.window // 2
        offs = torch.arange(-r, r + 1)
        rows = (grid[..., 0:1] + offs.view(1, 1, -1)).clamp(0, h - 1)   # (B, K, win)
        cols = (grid[..., 1:2] + offs.view(1, 1, -1)).clamp(0, w - 1)
        flat = rows[..., :, None] * w + cols[..., None, :]               # (B, K, win, win)
        k = grid.shape[1]
        idx = flat.reshape(b, 1, -1).expand(b, 2, -1)
        vals = torch.gather(grads.reshape(b, 2, -1), 2, idx)
        return vals.reshape(b, 2, k, -1).permute(0, 2, 1, 3).reshape(b, k, -1)

    def detect(self, image, k_top=KEYNET_K_TOP):
        if k_top < 1:
            raise ConfigError("k_top", "must be >= 1")
        image = self._check(image)
        grid, coords, scores, valid, desc = {}, {}, {}, {}, {}
        for s in self.scales:
            g = self.gradients(image, s)
            resp = self.response(g)
            g_b, h, w = resp.shape
            peak = resp == F.max_pool2d(resp[:, None], 3, 1, 1)[:, 0]
            ok = peak & (resp > 1e-10)
            m = self.border
            ok[:, :m, :] = False
            ok[:, -m:, :] = False
            ok[:, :, :m] = False
            ok[:, :, -m:] = False
            masked = torch.where(ok, resp, torch.full_like(resp, -float("inf"))).reshape(g_b, -1)
            order = torch.sort(masked, dim=1, descending=True, stable=True).indices
            n = min(k_top, h * w)
            top = order[:, :n]
            top_scores = torch.gather(masked, 1, top)
            is_valid = torch.isfinite(top_scores)
            if n < k_top:
                pad = k_top - n
                top = torch.cat([top, torch.zeros(g_b, pad, dtype=top.dtype)], 1)
                top_scores = torch.cat([top_scores, torch.zeros(g_b, pad, dtype=top_scores.dtype)], 1)
                is_valid = torch.cat([is_valid, torch.zeros(g_b, pad, dtype=torch.bool)], 1)
            top = torch.where(is_valid, top, torch.zeros_like(top))
            top_scores = torch.where(is_valid, top_scores, torch.zeros_like(top_scores))
            gi = torch.stack([top // w, top % w], dim=-1)
            grid[s] = gi
            coords[s] = gi * s
            scores[s] = top_scores
            valid[s] = is_valid
            desc[s] = self.describe(g, gi) * is_valid[..., None].to(g.dtype)
        return KeypointSet(self.scales, grid, coords, scores, valid, desc, k_top)

    def describe_at(self, image, keypoints):
        """Descriptors of ``image`` at the positions of ``keypoints`` (HR-anchored)."""
        image = self._check(image)
        desc = {}
        for s in keypoints.scales:
            g = self.gradients(image, s)
            v = keypoints.valid[s]
            desc[s] = self.describe(g, keypoints.grid[s]) * v[..., None].to(g.dtype)
        return KeypointSet(keypoints.scales, keypoints.grid, keypoints.coords,
                           keypoints.scores, keypoints.valid, desc, keypoints.k_top)


# --------------------------------------------------------------------------- hue

@dataclass
class HueMap:
    hue: torch.Tensor              # (B, H, W) in [0, 1)
    saturation_mask: torch.Tensor  # (B, H, W) in [0, 1]


def extract_hue(image):
    """Hexagonal HSV hue in [0, 1) and saturation of a unit-range RGB image."""
    squeeze = image.dim() == 3
    image = _batched(image)
    _check_unit_rgb(image)
    r, g, b = image[:, 0], image[:, 1], image[:, 2]
    mx, argmx = image.max(dim=1)
    mn = image.min(dim=1).values
    delta = mx - mn
    safe = torch.where(delta > 0, delta, torch.ones_like(delta))
    h_r = torch.remainder((g - b) / safe, 6.0)
    h_g = (b - r) / safe + 2.0
    h_b = (r - g) / safe + 4.0
    h = torch.where(argmx == 0, h_r, torch.where(argmx == 1, h_g, h_b)) / 6.0
    h = torch.where(delta > 0, h, torch.zeros_like(h))
    h = torch.where(h >= 1.0, h - 1.0, h)
    sat = torch.where(mx > 0, delta / torch.where(mx > 0, mx, torch.ones_like(mx)),
                      torch.zeros_like(mx))
    if squeeze:
        h, sat = h[0], sat[0]
    return HueMap(h, sat)


# --------------------------------------------------------------------------- bundle

def parameter_digest(*modules):
    """sha256 over every parameter and buffer of ``modules``, in name order."""
    h = hashlib.sha256()
    for i, module in enumerate(modules):
        for name, t in sorted(module.state_dict().items()):
            h.update(f"{i}:{name}:{tuple(t.shape)}:{t.dtype}".encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class SupervisorBundle:
    ctpn: CtpnSurrogate
    crnn: CrnnSurrogate
    keynet: KeynetSurrogate
    frozen_fingerprint: str = ""
    calls: dict = field(default_factory=lambda: {"ctpn": 0, "crnn": 0, "keynet": 0, "hue": 0})

    def __post_init__(self):
        for m in (self.ctpn, self.crnn, self.keynet):
            _freeze(m)
        self.frozen_fingerprint = self.fingerprint()

    def fingerprint(self):
        return parameter_digest(self.ctpn, self.crnn, self.keynet)

    def to(self, dtype):
        for m in (self.ctpn, self.crnn, self.keynet):
            m.to(dtype)
        self.frozen_fingerprint = self.fingerprint()
        return self

    def extract_ctpn(self, image):
        self.calls["ctpn"] += 1
        return self.ctpn(image)

    def extract_crnn(self, image):
        self.calls["crnn"] += 1
        return self.crnn(image)

    def extract_crnn_lines(self, image):
        self.calls["crnn"] += 1
        return self.crnn(line_strips(_batched(image), self.crnn.height_factor))

    def extract_keypoints(self, image, k_top=KEYNET_K_TOP):
        self.calls["keynet"] += 1
        return self.keynet.detect(image, k_top)

    def describe_at(self, image, keypoints):
        self.calls["keynet"] += 1
        return self.keynet.describe_at(image, keypoints)

    def extract_hue(self, image):
        self.calls["hue"] += 1
        return extract_hue(image)


_CALIBRATION_CACHE = {}


def calibration_pages(n=32, size=256, seed=9000):
    from .fixtures import generate_page

    pages = [generate_page(seed + i, size=size, density=0.8) for i in range(n)]
    return [(torch.from_numpy(p.hr).float(), p.glyph_boxes.boxes) for p in pages]


def _calibrated_state(ctpn, seed):
    """Calibrate the CTPN heads, reusing weights from ``$TDSR_CACHE`` when present."""
    cache = os.environ.get("TDSR_CACHE")
    path = Path(cache) / f"ctpn_surrogate_{seed}_v2.tdsr" if cache else None
    if path is not None and path.exists():
        try:
            _, tensors = checkpoint.load_archive(path)
            return checkpoint.load_state_into(ctpn, tensors).state_dict()
        except (ChecksumError, ShapeError, ValueError) as exc:
            log.warning("ignoring cached supervisor weights %s: %s", path, exc)
    calibrate_ctpn(ctpn, calibration_pages())
    state = {k: v.clone() for k, v in ctpn.state_dict().items()}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save_archive(path, {"kind": "ctpn_surrogate", "seed": seed}, state)
    return state


def surrogate_bundle(seed=0, calibrate=True):
    """Fixed-seed surrogate supervisors; the CTPN heads are calibrated on fixture pages."""
    ctpn = CtpnSurrogate(seed=seed * 10 + 1)
    if calibrate:
        key = seed
        if key not in _CALIBRATION_CACHE:
            _CALIBRATION_CACHE[key] = _calibrated_state(ctpn, seed)
        ctpn.load_state_dict(_CALIBRATION_CACHE[key])
    return SupervisorBundle(ctpn, CrnnSurrogate(seed=seed * 10 + 2), KeynetSurrogate())


def load_supervisor(kind, spec, seed=0):
    """Resolve a ``supervisor.<kind>`` config value: ``surrogate`` or ``checkpoint:<path>``."""
    surrogates = {"ctpn": lambda: surrogate_bundle(seed).ctpn,
                  "crnn": lambda: CrnnSurrogate(seed=seed * 10 + 2),
                  "keynet": KeynetSurrogate}
    if kind not in surrogates:
        raise ConfigError(f"supervisor.{kind}", "unknown supervisor")
    spec = (spec or "surrogate").strip()
    module = surrogates[kind]()
    if spec == "surrogate":
        return module
    if spec.startswith("checkpoint:"):
        path = spec.split(":", 1)[1]
        try:
            meta, tensors = checkpoint.load_archive(path)
        except FileNotFoundError:
            log.warning("supervisor.%s weights %s not found; using surrogate", kind, path)
            return module
        if kind == "ctpn" and str(meta.get("smooth", True)).lower() == "false":
            module = CtpnSurrogate(seed=seed * 10 + 1, smooth=False)
        elif kind == "crnn" and str(meta.get("smooth", True)).lower() == "false":
            module = CrnnSurrogate(seed=seed * 10 + 2, smooth=False)
        return checkpoint.load_state_into(module, tensors)
    raise ConfigError(f"supervisor.{kind}", f"expected 'surrogate' or 'checkpoint:<path>', got {spec!r}")


def bundle_from_config(cfg, seed=0):
    """Build a bundle from ``supervisor.*`` keys of a flat config mapping."""
    parts = {k: load_supervisor(k, cfg.get(f"supervisor.{k}"), seed) for k in ("ctpn", "crnn", "keynet")}
    return SupervisorBundle(parts["ctpn"], parts["crnn"], parts["keynet"])
