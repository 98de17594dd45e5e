"""Dataset construction: registration, patch extraction, LR simulation, splits.

Images are ``(C, H, W)`` float64 numpy arrays in unit range. A translation
``t = (dy, dx)`` always means "move content by t": ``translate(img, t)[y, x]
== img[y - dy, x - dx]``. Registration returns the translation that, applied
to the upsampled LR, best matches the HR.
"""
import csv
import logging
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import resample
from .errors import ConfigError, DataIntegrityError, InputTooSmallError, ShapeError

log = logging.getLogger(__name__)

SUPPORTED_DPI = (75, 150, 200, 300, 600)
DPI_PAIRS = ((75, 300), (150, 600))
TRAIN_CORPORA = frozenset({"bulletin", "article"})
SCALE = 4


@dataclass
class ScanRecord:
    path: str
    page_id: str
    dpi: int
    shift_index: int
    corpus: str = "bulletin"
    image: np.ndarray = None

    def __post_init__(self):
        self.dpi = int(self.dpi)
        self.shift_index = int(self.shift_index)
        if self.dpi not in SUPPORTED_DPI:
            raise DataIntegrityError(f"{self.path}: unsupported dpi {self.dpi}")
        if not 0 <= self.shift_index <= 8:
            raise DataIntegrityError(f"{self.path}: shift_index {self.shift_index} not in 0..8")

    @property
    def key(self):
        return (self.corpus, self.page_id, self.dpi, self.shift_index)

    def load(self):
        if self.image is None:
            self.image = read_image(self.path)
        return self.image


@dataclass
class RegisteredPair:
    lr: np.ndarray
    hr: np.ndarray
    translation: tuple = (0, 0)
    scale: int = SCALE
    source: str = "real"
    aligned: bool = False
    meta: dict = field(default_factory=dict)


@dataclass
class PatchPair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    origin: tuple
    split: str = "train"
    source: str = "real"
    meta: dict = field(default_factory=dict)

    @property
    def hr_origin(self):
        return (SCALE * self.origin[0], SCALE * self.origin[1])


@dataclass
class TranslationEstimate:
    shift: tuple
    mse: float
    evaluated: int


# ------------------------------------------------------------------ geometry

def translate(img, shift):
    """Integer translation with edge replication."""
    dy, dx = int(shift[0]), int(shift[1])
    h, w = img.shape[-2:]
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return img[..., rows[:, None], cols[None, :]]


def crop_to_ratio(lr, hr, scale=SCALE):
    """Trim so that ``hr`` is exactly ``scale`` times ``lr`` in both axes."""
    h = min(lr.shape[-2], hr.shape[-2] // scale)
    w = min(lr.shape[-1], hr.shape[-1] // scale)
    if h < 1 or w < 1:
        raise ShapeError(f"cannot pair LR {lr.shape} with HR {hr.shape}")
    return lr[..., :h, :w], hr[..., :scale * h, :scale * w]


def simulate_lr(hr, scale=SCALE):
    """Bicubic downsampling with the shared resampler (same as the consistency loss).

    Cubic overshoot at sharp edges is clipped back into the unit range.
    """
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ShapeError(f"HR dims {h}x{w} not divisible by {scale}; crop first")
    out = resample.downsample(hr, scale)
    return out.clamp(0.0, 1.0) if isinstance(out, torch.Tensor) else np.clip(out, 0.0, 1.0)


def estimate_translation(lr, hr, margin=32, radius=16, samples=200, seed=0, scale=SCALE):
    """Integer translation aligning bicubically upsampled ``lr`` with ``hr``.

    MSE is measured on the central crop that excludes ``margin`` pixels on every
    side. ``samples`` random shifts in ``[-radius, radius]^2`` (plus the origin)
    seed the search, which then descends through 3x3 neighbourhoods of the
    best shift until no neighbour improves.
    """
    if radius < 1:
        raise ConfigError("radius", "must be >= 1")
    if radius > margin:
        raise ConfigError("radius", f"radius {radius} exceeds margin {margin}")
    lr, hr = crop_to_ratio(lr, hr, scale)
    up = resample.upsample(lr, scale)
    H, W = hr.shape[-2:]
    if H - 2 * margin <= 0 or W - 2 * margin <= 0:
        raise InputTooSmallError(f"{H}x{W} image leaves no crop inside a {margin}px margin")
    ref = hr[..., margin:H - margin, margin:W - margin]
    cache = {}

    def cost(t):
        if t not in cache:
            dy, dx = t
            moved = up[..., margin - dy:H - margin - dy, margin - dx:W - margin - dx]
            cache[t] = float(np.mean((moved - ref) ** 2))
        return cache[t]

    rng = np.random.default_rng(seed)
    cands = [(0, 0)] + [tuple(int(v) for v in s)
                        for s in rng.integers(-radius, radius + 1, size=(samples, 2))]
    best = min(cands, key=lambda t: (cost(t), t))
    while True:
        hood = [(best[0] + a, best[1] + b) for a in (-1, 0, 1) for b in (-1, 0, 1)
                if abs(best[0] + a) <= radius and abs(best[1] + b) <= radius]
        nxt = min(hood, key=lambda t: (cost(t), t))
        if nxt == best:
            break
        best = nxt
    return TranslationEstimate(best, cost(best), len(cache))


def roll_crop(img, shift):
    """Integer shift restricted to the valid region: ``out[v] = img[v - shift]``.

    Returns ``(out, (row0, col0))`` where ``(row0, col0)`` is the output's
    origin in the shifted frame.
    """
    dy, dx = int(shift[0]), int(shift[1])
    h, w = img.shape[-2:]
    if abs(dy) >= h or abs(dx) >= w:
        raise ShapeError(f"shift {shift} larger than image {h}x{w}")
    r0, r1 = max(0, dy), h + min(0, dy)
    c0, c1 = max(0, dx), w + min(0, dx)
    return img[..., r0 - dy:r1 - dy, c0 - dx:c1 - dx], (r0, c0)


def _subpixel_rows(n, s):
    """Cubic interpolation matrix for ``out[v] = in[v - s]`` over valid ``v``."""
    lo = math.ceil(1 + s)
    hi = math.floor(n - 2 + s)
    vs = np.arange(lo, hi + 1)
    m = np.zeros((len(vs), n))
    for i, v in enumerate(vs):
        pos = v - s
        base = math.floor(pos)
        for tap in range(base - 1, base + 3):
            m[i, min(max(tap, 0), n - 1)] += resample.cubic_kernel(pos - tap)
    return m, lo


def apply_translation(pair, scale=SCALE):
    """Shift the LR by ``pair.translation`` (HR pixels) and crop both to the valid overlap.

    Shifts that are multiples of ``scale`` are pure index crops of the LR;
    anything else is a cubic sub-pixel resampling of the LR.
    """
    ty, tx = pair.translation
    lr, hr = crop_to_ratio(pair.lr, pair.hr, scale)
    h, w = lr.shape[-2:]
    if abs(ty) >= scale * h or abs(tx) >= scale * w:
        raise ShapeError(f"translation {pair.translation} larger than image")
    if ty % scale == 0 and tx % scale == 0:
        out, (r0, c0) = roll_crop(lr, (ty // scale, tx // scale))
    else:
        my, r0 = _subpixel_rows(h, ty / scale)
        mx, c0 = _subpixel_rows(w, tx / scale)
        out = my @ lr @ mx.T
    oh, ow = out.shape[-2:]
    hr = hr[..., scale * r0:scale * (r0 + oh), scale * c0:scale * (c0 + ow)]
    return replace(pair, lr=out, hr=hr, aligned=True)


def _grid(n, size):
    if n < size:
        raise InputTooSmallError(f"dimension {n} smaller than patch size {size}")
    starts = list(range(0, n - size + 1, size))
    if starts[-1] + size < n:
        starts.append(n - size)
    return sorted(set(starts))


def extract_patches(pair, size=256, scale=SCALE, split="train"):
    """Tile the LR with stride ``size``; the last row/column is clamped to the border."""
    lr, hr = pair.lr, pair.hr
    h, w = lr.shape[-2:]
    if hr.shape[-2:] != (scale * h, scale * w):
        raise ShapeError(f"HR {hr.shape[-2:]} is not {scale}x LR {lr.shape[-2:]}")
    patches = []
    hs = scale * size
    for y in _grid(h, size):
        for x in _grid(w, size):
            patches.append(PatchPair(
                lr[..., y:y + size, x:x + size],
                hr[..., scale * y:scale * y + hs, scale * x:scale * x + hs],
                (y, x), split, pair.source, dict(pair.meta)))
    return patches


# ------------------------------------------------------------------ splits

@dataclass
class Partition:
    train: list
    val: list
    test: list


def split_dataset(records, train_corpora=TRAIN_CORPORA):
    """Zero-shift scans validate, shifts 1..8 train; other corpora go to test."""
    counts = Counter(r.key for r in records)
    dups = [k for k, c in counts.items() if c > 1]
    if dups:
        raise DataIntegrityError(f"duplicate (corpus, page, dpi, shift) records: {sorted(dups)[:5]}")
    ordered = sorted(records, key=lambda r: r.key)
    part = Partition([], [], [])
    shifts = defaultdict(set)
    for r in ordered:
        if r.corpus not in train_corpora:
            part.test.append(r)
            continue
        shifts[(r.corpus, r.page_id, r.dpi)].add(r.shift_index)
        (part.val if r.shift_index == 0 else part.train).append(r)
    for key, got in sorted(shifts.items()):
        missing = sorted(set(range(9)) - got)
        if missing:
            warnings.warn(f"{key}: missing shift indices {missing}", stacklevel=2)
    return part


# ------------------------------------------------------------------ phase correlation

@dataclass
class TileShift:
    origin: tuple
    shift: tuple
    flagged: bool = False
    peak: float = 0.0


def _gray(img):
    return img.mean(axis=0) if img.ndim == 3 else img


def phase_correlation(reference, moving):
    """Integer ``t`` with ``translate(moving, t) ~= reference``, plus the peak height."""
    ref, mov = _gray(reference), _gray(moving)
    win = np.outer(np.hanning(ref.shape[0]), np.hanning(ref.shape[1]))
    fa = np.fft.fft2((ref - ref.mean()) * win)
    fb = np.fft.fft2((mov - mov.mean()) * win)
    cross = fa * np.conj(fb)
    cross /= np.maximum(np.abs(cross), 1e-12)
    corr = np.fft.ifft2(cross).real
    peak = np.unravel_index(np.argmax(corr), corr.shape)
    shift = tuple(int(p - n) if p > n // 2 else int(p) for p, n in zip(peak, corr.shape))
    return shift, float(corr.max())


def _feather(n):
    ramp = np.minimum(np.arange(1, n + 1), np.arange(n, 0, -1)).astype(np.float64)
    return ramp / ramp.max()


def align_tiles_phase_correlation(scan, reference, tile=512, flat_tol=1e-10):
    """Locally align ``scan`` to ``reference`` with half-overlapping phase-correlated tiles.

    Each tile's shift is applied to the whole scan, the tile is cut out, and the
    tiles are blended back with separable triangular weights. Flat tiles are
    flagged and inherit the previous (or next) valid tile's shift.
    """
    if scan.shape != reference.shape:
        raise ShapeError(f"scan {scan.shape} and reference {reference.shape} differ")
    h, w = scan.shape[-2:]
    th, tw = min(tile, h), min(tile, w)
    ys = _grid(h, th) if th == h else sorted(set(list(range(0, h - th + 1, th // 2)) + [h - th]))
    xs = _grid(w, tw) if tw == w else sorted(set(list(range(0, w - tw + 1, tw // 2)) + [w - tw]))
    report = []
    for y in ys:
        for x in xs:
            ref_t = reference[..., y:y + th, x:x + tw]
            scan_t = scan[..., y:y + th, x:x + tw]
            if _gray(ref_t).var() < flat_tol or _gray(scan_t).var() < flat_tol:
                report.append(TileShift((y, x), (0, 0), True))
                continue
            shift, peak = phase_correlation(ref_t, scan_t)
            report.append(TileShift((y, x), shift, False, peak))
    good = [i for i, r in enumerate(report) if not r.flagged]
    for i, r in enumerate(report):
        if r.flagged and good:
            prev = [g for g in good if g < i]
            src = prev[-1] if prev else good[0]
            r.shift = report[src].shift
    acc = np.zeros_like(scan, dtype=np.float64)
    wsum = np.zeros((h, w))
    weight = np.outer(_feather(th), _feather(tw))
    for r in report:
        y, x = r.origin
        moved = translate(scan, r.shift)[..., y:y + th, x:x + tw]
        acc[..., y:y + th, x:x + tw] += moved * weight
        wsum[y:y + th, x:x + tw] += weight
    return acc / wsum, report


# ------------------------------------------------------------------ I/O

def read_image(path):
    """PNG/TIFF (8 or 16 bit, gray or RGB) -> ``(3, H, W)`` float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im)
        mode = im.mode
    if arr.dtype == np.uint8:
        data = arr.astype(np.float64) / 255.0
    elif arr.dtype in (np.uint16, np.int32) or mode.startswith("I"):
        data = arr.astype(np.float64) / 65535.0
    elif arr.dtype == bool:
        data = arr.astype(np.float64)
    else:
        data = arr.astype(np.float64)
    if data.ndim == 2:
        data = np.repeat(data[None], 3, axis=0)
    else:
        data = np.moveaxis(data[..., :3], -1, 0)
    return np.clip(data, 0.0, 1.0)


def write_png(path, img):
    arr = np.round(np.clip(np.moveaxis(np.asarray(img), 0, -1), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


MANIFEST_FIELDS = ("path", "page_id", "dpi", "shift_index", "corpus")


def read_manifest(path):
    """Read a ``path, page_id, dpi, shift_index, corpus`` table; paths are manifest-relative."""
    path = Path(path)
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f, skipinitialspace=True)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataIntegrityError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            p = Path(row["path"].strip())
            if not p.is_absolute():
                p = path.parent / p
            records.append(ScanRecord(str(p), row["page_id"].strip(), row["dpi"],
                                      row["shift_index"], row["corpus"].strip()))
    return records


def write_manifest(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            p = Path(r.path)
            try:
                p = p.relative_to(Path(path).parent)
            except ValueError:
                pass
            w.writerow([str(p), r.page_id, r.dpi, r.shift_index, r.corpus])


INDEX_FIELDS = ("page", "dpi", "shift", "y", "x", "split", "source", "lr", "hr")


def patch_name(page, dpi, shift, y, x, kind):
    return f"{page}_{dpi}_{shift}_{y}_{x}_{kind}.png"


def write_patch_store(root, patches, append=False):
    """Write patch PNGs plus ``index.csv``; names follow ``<page>_<dpi>_<shift>_<y>_<x>_{lr,hr}.png``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = root / "index.csv"
    new = not (append and index.exists())
    with open(index, "w" if new else "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(INDEX_FIELDS)
        for p in patches:
            m = p.meta
            y, x = p.origin
            sub = root / p.source
            sub.mkdir(exist_ok=True)
            names = [patch_name(m.get("page", "p"), m.get("dpi", 0), m.get("shift", 0), y, x, k)
                     for k in ("lr", "hr")]
            write_png(sub / names[0], p.lr_patch)
            write_png(sub / names[1], p.hr_patch)
            w.writerow([m.get("page", "p"), m.get("dpi", 0), m.get("shift", 0), y, x, p.split,
                        p.source, f"{p.source}/{names[0]}", f"{p.source}/{names[1]}"])
    return index


def read_patch_store(root, split=None, source=None):
    root = Path(root)
    index = root / "index.csv"
    if not index.exists():
        raise FileNotFoundError(f"no patch store index at {index}")
    out = []
    with open(index, newline="") as f:
        for row in csv.DictReader(f):
            if split is not None and row["split"] != split:
                continue
            if source is not None and row["source"] != source:
                continue
            meta = {"page": row["page"], "dpi": int(row["dpi"]), "shift": int(row["shift"])}
            out.append(PatchPair(read_image(root / row["lr"]), read_image(root / row["hr"]),
                                 (int(row["y"]), int(row["x"])), row["split"], row["source"], meta))
    return out
