"""Axis-aligned text boxes and mask IoU."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class BoxSet:
    """Rectangles ``(x0, y0, x1, y1)`` in pixels (half-open) on an ``(H, W)`` image."""
    boxes: np.ndarray
    shape: tuple
    scores: np.ndarray = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if self.scores is None:
            self.scores = np.ones(len(self.boxes))
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.shape = tuple(int(v) for v in self.shape)

    def __len__(self):
        return len(self.boxes)

    def validate(self):
        h, w = self.shape
        b = self.boxes
        if len(b) and not ((b[:, 0] < b[:, 2]).all() and (b[:, 1] < b[:, 3]).all()):
            raise ContractError("degenerate box (need x0 < x1 and y0 < y1)")
        if len(b) and (b.min() < 0 or (b[:, 2] > w).any() or (b[:, 3] > h).any()):
            raise ContractError("box outside image bounds")
        return self


def rasterize(boxset):
    """Binary mask of the union of boxes; pixel (y, x) is covered when its centre is inside."""
    h, w = boxset.shape
    mask = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in boxset.boxes:
        c0 = max(int(np.ceil(x0 - 0.5)), 0)
        c1 = min(int(np.ceil(x1 - 0.5)), w)
        r0 = max(int(np.ceil(y0 - 0.5)), 0)
        r1 = min(int(np.ceil(y1 - 0.5)), h)
        if c1 > c0 and r1 > r0:
            mask[r0:r1, c0:c1] = True
    return mask


def mask_iou(a, b):
    """IoU of two BoxSets on the pixel grid; returns ``(iou, degenerate)``.

    Both empty -> (1.0, True); exactly one empty -> 0.0.
    """
    if a.shape != b.shape:
        raise ContractError(f"box sets on different image sizes {a.shape} vs {b.shape}")
    ma, mb = rasterize(a), rasterize(b)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 1.0, True
    return float(np.logical_and(ma, mb).sum() / union), False
