"""Per-image evaluation of SR models and the statistical comparison tables."""
import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from . import resample
from .checkpoint import load_generator
from .errors import ConfigError, ContractError
from .generator import to_signed, to_unit
from .metrics import CtpnDetector, detection_iou, lpips, psnr, ssim
from .stats import significance_matrix

log = logging.getLogger(__name__)

BICUBIC_LABEL = "Int."
METRICS = ("psnr", "ssim", "lpips", "iou")
HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "lpips": False, "iou": True}


@dataclass
class MetricRecord:
    image_id: str
    model_label: str
    psnr_db: float
    ssim: float
    lpips: float = None
    iou: float = None
    iou_degenerate: bool = False
    regime: str = "simulated"


def bicubic(lr):
    """The interpolation baseline: bicubic upsampling clipped to the unit range."""
    return np.clip(resample.upsample(np.asarray(lr, dtype=np.float64)), 0.0, 1.0)


def as_super_resolver(label, model):
    """Wrap a generator, checkpoint path or callable as ``f(lr_unit) -> sr_unit``."""
    if isinstance(model, (str, Path)):
        if not Path(model).exists():
            raise ConfigError(label, f"checkpoint {model} not found")
        model = load_generator(model)
    if isinstance(model, torch.nn.Module):
        net = model.eval()
        dtype = next(net.parameters()).dtype

        @torch.no_grad()
        def run(lr):
            x = torch.as_tensor(np.asarray(lr), dtype=dtype)[None]
            return to_unit(net(to_signed(x)))[0].double().clamp(0, 1).numpy()
        return run
    if callable(model):
        return model
    raise ConfigError(label, f"cannot evaluate object of type {type(model).__name__}")


def _arrays(item):
    if hasattr(item, "lr_patch"):
        return item.lr_patch, item.hr_patch
    return item.lr, item.hr


def _image_id(item, idx):
    meta = getattr(item, "meta", {}) or {}
    return str(meta.get("image_id", meta.get("page_id", idx)))


def evaluate_images(models, items, detector, regime="simulated", lpips_backend=None):
    """MetricRecords for every (image, model); the bicubic baseline is always included."""
    if not models:
        raise ContractError("need at least one model")
    if not items:
        raise ContractError("need at least one test image")
    resolvers = {BICUBIC_LABEL: bicubic}
    for label, model in models.items():
        resolvers[label] = as_super_resolver(label, model)
    records = []
    for idx, item in enumerate(items):
        lr, hr = _arrays(item)
        hr = np.asarray(hr, dtype=np.float64)
        for label, fn in resolvers.items():
            sr = np.asarray(fn(lr), dtype=np.float64)
            iou, degenerate = detection_iou(sr, hr, detector, return_degenerate=True)
            records.append(MetricRecord(_image_id(item, idx), label, psnr(sr, hr), ssim(sr, hr),
                                        lpips(sr, hr, lpips_backend), iou, degenerate, regime))
    return records


def records_frame(records):
    return pd.DataFrame([asdict(r) for r in records]).rename(columns={"psnr_db": "psnr"})


def _available(frame, metric):
    return metric in frame and frame[metric].notna().any()


def summarize(frame):
    """Per-model 'mean±std' per metric; infinite PSNR values are excluded and counted."""
    rows = []
    for label, grp in frame.groupby("model_label", sort=False):
        row = {"model": label}
        for metric in METRICS:
            if not _available(frame, metric):
                continue
            vals = grp[metric].astype(float)
            if metric == "psnr":
                row["psnr_inf_count"] = int(np.isinf(vals).sum())
                vals = vals[np.isfinite(vals)]
            vals = vals.dropna()
            std = float(vals.std(ddof=0)) if len(vals) else math.nan
            row[metric] = f"{vals.mean():.4f}±{std:.4f}" if len(vals) else ""
        rows.append(row)
    return pd.DataFrame(rows)


def significance(frame, metric):
    """Pairwise signed-star matrix for ``metric`` as a DataFrame with a Σ column."""
    labels = list(dict.fromkeys(frame["model_label"]))
    groups = [frame.loc[frame["model_label"] == lab, metric].astype(float).to_numpy()
              for lab in labels]
    groups = [np.nan_to_num(g, posinf=1e9) for g in groups]  # inf PSNR ranks highest
    mat = significance_matrix(labels, groups, HIGHER_IS_BETTER[metric])
    return pd.DataFrame(mat.to_rows(), columns=["model", *labels, "Σ"]), mat


def violin_frame(frame, metric):
    return frame[["image_id", "model_label", metric]].rename(columns={metric: "value"})


@dataclass
class Evaluation:
    records: pd.DataFrame
    summary: dict        # regime -> DataFrame
    significance: dict   # (regime, metric) -> DataFrame


def compare(frame, out_dir=None):
    """Summary and significance matrices per regime; LPIPS is skipped when absent."""
    summaries, sigs = {}, {}
    for regime, grp in frame.groupby("regime", sort=False):
        if grp["model_label"].nunique() < 2:
            raise ContractError(f"regime {regime!r}: need at least two models to compare")
        summaries[regime] = summarize(grp)
        for metric in METRICS:
            if not _available(grp, metric):
                warnings.warn(f"{metric} unavailable for regime {regime!r}; matrix omitted")
                continue
            sigs[(regime, metric)] = significance(grp, metric)[0]
        if out_dir is not None:
            d = Path(out_dir) / regime
            d.mkdir(parents=True, exist_ok=True)
            summaries[regime].to_csv(d / "summary.csv", index=False)
            for (reg, metric), table in sigs.items():
                if reg == regime:
                    table.to_csv(d / f"sig_{metric}.csv", index=False)
                    violin_frame(grp, metric).to_csv(d / f"violin_{metric}.csv", index=False)
    return summaries, sigs


def evaluate_models(models, test_sets, detector, out_dir=None, lpips_backend=None):
    """Evaluate ``models`` on each ``test_sets[regime]`` and build the comparison tables.

    Writes ``<out>/<regime>/{metrics,summary,sig_<metric>,violin_<metric>}.csv``.
    """
    if not isinstance(detector, CtpnDetector) and not callable(detector):
        raise ContractError("detector must be callable")
    records = []
    for regime, items in test_sets.items():
        records += evaluate_images(models, items, detector, regime, lpips_backend)
    frame = records_frame(records)
    if out_dir is not None:
        for regime, grp in frame.groupby("regime", sort=False):
            d = Path(out_dir) / regime
            d.mkdir(parents=True, exist_ok=True)
            grp.to_csv(d / "metrics.csv", index=False, quoting=csv.QUOTE_MINIMAL)
    summaries, sigs = compare(frame, out_dir)
    return Evaluation(frame, summaries, sigs)


def read_metrics(paths):
    frames = [pd.read_csv(p, keep_default_na=True) for p in paths]
    return pd.concat(frames, ignore_index=True)
