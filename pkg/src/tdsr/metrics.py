"""Image-fidelity metrics and the text-detection IoU."""
import math
import warnings

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BoxSet, mask_iou
from .errors import MetricError, ShapeError

PSNR_INF = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _as_array(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _check_pair(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE); identical inputs give the ``PSNR_INF`` sentinel."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak ** 2 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' correlation of a 2-D array with the 1-D window ``g``."""
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim_map(a, b, peak=1.0, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Local SSIM of two 2-D arrays over every full window position."""
    g = gaussian_window(size, sigma)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, peak=1.0, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean local SSIM (Gaussian window), computed per channel and averaged."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < size or a.shape[-2] < size:
        raise ShapeError(f"image {a.shape[-2:]} smaller than the {size}x{size} window")
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean([ssim_map(ca, cb, peak, size, sigma).mean() for ca, cb in zip(a, b)]))


def lpips(a, b, backend=None):
    """Perceptual distance from a pluggable ``backend(a, b) -> float``.

    Returns None when no backend is configured or when the backend fails.
    """
    if backend is None:
        return None
    try:
        value = float(backend(_as_array(a), _as_array(b)))
    except Exception as exc:  # backend failures degrade to an absent value
        warnings.warn(f"LPIPS backend failed: {exc}")
        return None
    return value


class CtpnDetector:
    """Line boxes from a CTPN-style model.

    Anchors whose text probability exceeds ``threshold`` are kept; horizontally
    contiguous positives of the same anchor row merge into one box whose
    vertical extent is the mean regressed extent of its members.
    """

    def __init__(self, ctpn, threshold=0.7):
        self.ctpn = ctpn
        self.threshold = float(threshold)

    @torch.no_grad()
    def __call__(self, image):
        x = torch.as_tensor(_as_array(image), dtype=next(self.ctpn.parameters()).dtype)
        feats = self.ctpn(x[None] if x.dim() == 3 else x)
        prob = torch.softmax(feats.clss[0], dim=1)[:, 1].numpy()
        reg = feats.reg[0].numpy()
        s, ah = self.ctpn.stride, self.ctpn.anchor_height
        h_img, w_img = x.shape[-2:]
        boxes, scores = [], []
        for a, centre in enumerate(self.ctpn.anchor_centers()):
            on = prob[a] > self.threshold
            for i in range(on.shape[0]):
                j = 0
                while j < on.shape[1]:
                    if not on[i, j]:
                        j += 1
                        continue
                    k = j
                    while k < on.shape[1] and on[i, k]:
                        k += 1
                    cy = i * s + centre + reg[a, 0, i, j:k] * ah
                    hh = ah * np.exp(reg[a, 1, i, j:k])
                    y0 = max(0.0, float(np.mean(cy - hh / 2)))
                    y1 = min(float(h_img), float(np.mean(cy + hh / 2)))
                    if y1 > y0:
                        boxes.append((j * s, y0, min(k * s, w_img), y1))
                        scores.append(float(prob[a, i, j:k].mean()))
                    j = k
        return BoxSet(np.array(boxes).reshape(-1, 4), (h_img, w_img), np.array(scores))


def detection_iou(sr, hr, detector, return_degenerate=False):
    """Mask IoU between the union of boxes detected on ``sr`` and on ``hr``."""
    sr, hr = _check_pair(sr, hr)
    try:
        det_sr, det_hr = detector(sr), detector(hr)
    except Exception as exc:
        raise MetricError(f"detector failed: {exc}") from exc
    iou, degenerate = mask_iou(det_sr, det_hr)
    return (iou, degenerate) if return_degenerate else iou
