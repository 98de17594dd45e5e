"""Synthetic document pages and known-shift LR/HR pairs for desk-scale runs."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .boxes import BoxSet
from .datasets import (RegisteredPair, ScanRecord, simulate_lr, translate,
                       write_manifest, write_png)
from .errors import ConfigError

MAX_SHIFT = 8
INKS = {
    "black": (0.12, 0.12, 0.13),
    "blue": (0.12, 0.2, 0.6),
    "red": (0.62, 0.12, 0.1),
}


@dataclass
class SyntheticPage:
    hr: np.ndarray            # (3, size, size) unit range
    glyph_boxes: BoxSet       # one box per rendered text line
    seed: int
    background: tuple


def _render_line(canvas, rng, y, x_start, x_end, height, ink):
    """Draw stroke-based glyphs along one baseline; returns the inked extent."""
    x = x_start
    left, right, top, bottom = None, None, None, None
    while x < x_end:
        for _ in range(rng.integers(2, 8)):
            gw = int(rng.integers(3, 7))
            if x + gw > x_end:
                break
            tall = rng.random() < 0.25
            g_top = y - (height // 3 if tall else 0)
            g_bot = y + height
            stroke = int(rng.integers(1, 3))
            canvas[:, g_top:g_bot, x:x + stroke] = ink
            if rng.random() < 0.7:
                canvas[:, g_top:g_bot, x + gw - stroke:x + gw] = ink
            bar = rng.choice([g_top, y + height // 2, g_bot - stroke])
            if rng.random() < 0.8:
                canvas[:, bar:bar + stroke, x:x + gw] = ink
            left = x if left is None else left
            right = x + gw
            top = g_top if top is None else min(top, g_top)
            bottom = g_bot if bottom is None else max(bottom, g_bot)
            x += gw + int(rng.integers(1, 3))
        x += int(rng.integers(5, 9))
    if left is None:
        return None
    return (left, top, right, bottom)


def generate_page(seed, size=256, density=0.6):
    """Render text-like lines of stroke glyphs on a paper-toned background.

    ``density`` in [0, 1] is the probability that each line slot is filled.
    Line geometry scales with ``size`` (a 256 px page has about ten lines).
    """
    if size < 64:
        raise ConfigError("size", "page size must be >= 64")
    rng = np.random.default_rng(seed)
    bg = np.array([0.93, 0.91, 0.86]) + rng.uniform(-0.03, 0.03, 3)
    canvas = np.ones((3, size, size)) * bg[:, None, None]
    unit = size / 256.0
    pitch = max(int(round(24 * unit)), 12)
    margin = max(int(round(14 * unit)), 6)
    boxes = []
    y = margin + pitch // 3
    while y + pitch <= size - margin:
        if rng.random() < density:
            height = int(rng.integers(max(int(7 * unit), 5), max(int(10 * unit), 6) + 1))
            x_end = size - margin - int(rng.integers(0, int(size * 0.3)))
            name = rng.choice(list(INKS), p=[0.7, 0.15, 0.15])
            ink = np.array(INKS[name])[:, None, None] + rng.uniform(-0.04, 0.04)
            box = _render_line(canvas, rng, y, margin + int(rng.integers(0, 6)),
                               x_end, height, ink)
            if box is not None:
                boxes.append(box)
        y += pitch
    canvas += rng.normal(0.0, 0.01, canvas.shape)
    hr = np.clip(canvas, 0.0, 1.0)
    bg_mean = float(hr.mean())
    for x0, y0, x1, y1 in boxes:
        assert hr[:, y0:y1, x0:x1].mean() < bg_mean, "ground-truth box not darker than page"
    return SyntheticPage(hr, BoxSet(np.array(boxes, dtype=np.float64).reshape(-1, 4),
                                    (size, size)), seed, tuple(bg))


def _check_shift(shift):
    if any(abs(int(s)) > MAX_SHIFT for s in shift):
        raise ConfigError("shift", f"|shift| must be <= {MAX_SHIFT}, got {tuple(shift)}")


def make_pair(page, shift, scale=4):
    """LR = simulate_lr(translate(hr, shift)); ``translation`` records the true correction."""
    _check_shift(shift)
    hr = page.hr if isinstance(page, SyntheticPage) else page
    lr = simulate_lr(translate(hr, shift), scale)
    return RegisteredPair(lr, hr, (-int(shift[0]), -int(shift[1])), scale, "simulated",
                          meta={"true_translation": (-int(shift[0]), -int(shift[1]))})


def scan_degrade(hr, seed, scale=4, blur=0.8, noise=0.015, gamma=1.15):
    """Scanner-like LR: optical blur, decimation, gamma/tone shift and sensor noise."""
    rng = np.random.default_rng(seed)
    blurred = np.stack([gaussian_filter(c, blur * scale / 2, mode="nearest") for c in hr])
    lr = simulate_lr(blurred, scale)
    lr = np.clip(lr, 0, 1) ** gamma * 0.97 + 0.015
    lr = lr + rng.normal(0.0, noise, lr.shape)
    return np.clip(lr, 0.0, 1.0)


def make_scan_pair(page, shift, seed=0, scale=4):
    """Like :func:`make_pair` but with the scanner-like degradation; tagged ``real``."""
    _check_shift(shift)
    hr = page.hr if isinstance(page, SyntheticPage) else page
    lr = scan_degrade(translate(hr, shift), seed, scale)
    return RegisteredPair(lr, hr, (-int(shift[0]), -int(shift[1])), scale, "real",
                          meta={"true_translation": (-int(shift[0]), -int(shift[1]))})


def write_corpus(root, n_pages=2, n_shifts=9, size=256, misregistration=(3, -2),
                 seed=0, lr_dpi=75, hr_dpi=300, corpus="bulletin"):
    """Write a two-resolution scan corpus plus ``manifest.csv``.

    Every shift index moves the page content by a small random offset (same
    for both resolutions); the LR scans additionally carry the fixed
    ``misregistration`` that registration has to recover (as its negation).
    ``corpus`` may name several corpora, each receiving ``n_pages`` pages.
    Returns the manifest path.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    corpora = (corpus,) if isinstance(corpus, str) else tuple(corpus)
    for p, corpus in ((p, c) for c in corpora for p in range(n_pages)):
        page = generate_page(seed * 1000 + len(records) // (2 * n_shifts), size=size, density=0.8)
        pid = f"{corpus}{p:02d}"
        for k in range(n_shifts):
            offset = (0, 0) if k == 0 else tuple(int(v) for v in rng.integers(-3, 4, 2))
            hr = translate(page.hr, offset)
            lr = scan_degrade(translate(hr, misregistration), seed * 1000 + p * 10 + k)
            for dpi, img in ((hr_dpi, hr), (lr_dpi, lr)):
                path = root / f"{pid}_{dpi}_{k}.png"
                write_png(path, img)
                records.append(ScanRecord(str(path), pid, dpi, k, corpus))
    manifest = root / "manifest.csv"
    write_manifest(manifest, records)
    return manifest
