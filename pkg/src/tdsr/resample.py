"""Shared bicubic resampler.

One implementation serves registration (upsampling), LR simulation and the
consistency loss (downsampling), so the three stay bit-identical.

The kernel is Catmull-Rom (a = -0.5). When downsampling, the kernel support
is stretched by the scale factor, which acts as the anti-aliasing prefilter;
upsampling uses the plain 4-tap kernel. Borders are handled by clipping the
window and renormalising the weights (PIL's convention).
"""
from functools import lru_cache

import numpy as np
import torch

from .errors import ShapeError

CUBIC_A = -0.5


def cubic_kernel(x, a=CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x < 1.0
    far = (x >= 1.0) & (x < 2.0)
    xn, xf = x[near], x[far]
    out[near] = ((a + 2.0) * xn - (a + 3.0)) * xn * xn + 1.0
    out[far] = (((xf - 5.0) * xf + 8.0) * xf - 4.0) * a
    return out


@lru_cache(maxsize=256)
def _weight_matrix(in_size, out_size):
    scale = in_size / out_size
    filterscale = max(scale, 1.0)
    support = 2.0 * filterscale
    w = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        center = (i + 0.5) * scale
        lo = max(int(center - support + 0.5), 0)
        hi = min(int(center + support + 0.5), in_size)
        taps = np.arange(lo, hi)
        k = cubic_kernel((taps - center + 0.5) / filterscale)
        total = k.sum()
        if total != 0.0:
            k = k / total
        w[i, lo:hi] = k
    w.setflags(write=False)
    return w


def weight_matrix(in_size, out_size):
    """Dense (out_size, in_size) interpolation matrix along one axis."""
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"invalid resize {in_size} -> {out_size}")
    return _weight_matrix(int(in_size), int(out_size))


def resize(x, size):
    """Bicubic resize of the last two axes of ``x`` to ``size = (h, w)``.

    Works on torch tensors (differentiable) and numpy arrays (returned as float64).
    """
    h_out, w_out = size
    h_in, w_in = x.shape[-2], x.shape[-1]
    wh = weight_matrix(h_in, h_out)
    ww = weight_matrix(w_in, w_out)
    if not isinstance(x, torch.Tensor):
        # numpy inputs go through the same torch kernels as the loss path
        return resize(torch.from_numpy(np.asarray(x, dtype=np.float64)), size).numpy()
    wh_t = torch.from_numpy(np.array(wh)).to(dtype=x.dtype, device=x.device)
    ww_t = torch.from_numpy(np.array(ww)).to(dtype=x.dtype, device=x.device)
    return wh_t @ x @ ww_t.transpose(0, 1)


def downsample(x, scale=4):
    """Downsample by an integer factor; both spatial dims must divide evenly."""
    h, w = x.shape[-2], x.shape[-1]
    if h % scale or w % scale:
        raise ShapeError(f"dims {h}x{w} not divisible by scale {scale}")
    return resize(x, (h // scale, w // scale))


def upsample(x, scale=4):
    h, w = x.shape[-2], x.shape[-1]
    return resize(x, (h * scale, w * scale))
