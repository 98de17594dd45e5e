"""``tdsr`` command line: register, extract, simulate, train, train-matrix, evaluate, compare."""
import argparse
import csv
import json
import logging
import random
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import format_config, load_config
from .config import _coerce
from .datasets import (DPI_PAIRS, PatchPair, RegisteredPair, apply_translation, estimate_translation,
                       extract_patches, read_image, read_manifest, read_patch_store, simulate_lr,
                       split_dataset, write_patch_store)
from .errors import ConfigError, ContractError, DataIntegrityError, InputTooSmallError, ShapeError
from .evaluator import compare, evaluate_models, read_metrics
from .generator import GeneratorConfig
from .metrics import CtpnDetector
from .supervisors import bundle_from_config
from .trainer import TrainConfig, VariantSpec, enumerate_variants, run_training, warmup

log = logging.getLogger("tdsr")

COMMANDS = ("register", "extract", "simulate", "train", "train-matrix", "evaluate", "compare")
INPUT_ERRORS = (ConfigError, FileNotFoundError, DataIntegrityError, ContractError, ShapeError,
                InputTooSmallError)
SHIFT_FIELDS = ("corpus", "page", "shift", "lr_dpi", "hr_dpi", "lr_path", "hr_path", "ty", "tx", "mse")


def _require(cfg, key):
    value = cfg[key]
    if not value:
        raise ConfigError(key, "must be set for this command")
    return Path(value)


def write_run_meta(out, args, cfg, extra=None):
    meta = {"command": args.command, "config_path": args.config, "output_dir": str(out),
            "seed": cfg["train.seed"], "profile": args.profile, "code_version": __version__,
            "config": cfg, **(extra or {})}
    with open(Path(out) / "run_meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=str)


# ------------------------------------------------------------------ data commands

def scan_pairs(records):
    """(LR record, HR record) for every page and shift index with a supported dpi pair."""
    by_key = {(r.corpus, r.page_id, r.shift_index, r.dpi): r for r in records}
    pairs = []
    for lo, hi in DPI_PAIRS:
        for (corpus, page, shift, dpi), rec in sorted(by_key.items()):
            if dpi == lo and (corpus, page, shift, hi) in by_key:
                pairs.append((rec, by_key[(corpus, page, shift, hi)]))
    return pairs


def plan_register(cfg):
    records = read_manifest(_require(cfg, "data.manifest"))
    missing = [r.path for r in records if not Path(r.path).exists()]
    if missing:
        raise FileNotFoundError(f"manifest entry not found: {missing[0]}")
    pairs = scan_pairs(records)
    if not pairs:
        raise ConfigError("data.manifest", "no LR/HR dpi pairs found")
    return pairs


def cmd_register(args, cfg, out):
    pairs = plan_register(cfg)
    if args.dry_run:
        print(f"register: {len(pairs)} scan pairs -> {out / 'shifts.csv'}")
        return 0
    kw = dict(margin=cfg["data.margin"], radius=cfg["data.radius"], samples=cfg["data.samples"])
    rows = []
    for lr_rec, hr_rec in pairs:
        est = estimate_translation(lr_rec.load(), hr_rec.load(), seed=cfg["train.seed"], **kw)
        rows.append([lr_rec.corpus, lr_rec.page_id, lr_rec.shift_index, lr_rec.dpi, hr_rec.dpi,
                     lr_rec.path, hr_rec.path, est.shift[0], est.shift[1], repr(est.mse)])
    with open(out / "shifts.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SHIFT_FIELDS)
        w.writerows(rows)
    # validation: re-register a sample of aligned pairs; the residual should vanish
    rng = random.Random(cfg["train.seed"])
    sample = rng.sample(range(len(pairs)), min(cfg["data.validation_pairs"], len(pairs)))
    residuals = []
    for i in sorted(sample):
        lr_rec, hr_rec = pairs[i]
        aligned = apply_translation(RegisteredPair(lr_rec.load(), hr_rec.load(),
                                                   (rows[i][7], rows[i][8])))
        res = estimate_translation(aligned.lr, aligned.hr, **kw).shift
        residuals.append(max(abs(res[0]), abs(res[1])))
    summary = {"pairs": len(pairs), "validated": len(residuals),
               "within_1px": int(sum(r <= 1 for r in residuals)),
               "max_residual": int(max(residuals)) if residuals else 0}
    with open(out / "validation.json", "w") as f:
        json.dump(summary, f, indent=2)
    print(f"registered {len(pairs)} pairs; validation {summary['within_1px']}/"
          f"{summary['validated']} within 1px")
    write_run_meta(out, args, cfg, {"validation": summary})
    return 0


def _read_shifts(path):
    if not path.exists():
        raise FileNotFoundError(f"registration table {path} not found")
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _subsample(items, limit, seed):
    if limit and len(items) > limit:
        idx = sorted(random.Random(seed).sample(range(len(items)), limit))
        return [items[i] for i in idx]
    return items


def cmd_extract(args, cfg, out):
    records = read_manifest(_require(cfg, "data.manifest"))
    shifts = _read_shifts(_require(cfg, "data.registration") / "shifts.csv")
    part = split_dataset(records)
    split_of = {r.key: name for name in ("train", "val", "test") for r in getattr(part, name)}
    store = out / "patches"
    if args.dry_run:
        print(f"extract: {len(shifts)} registered pairs -> {store}")
        return 0
    patches = []
    for row in shifts:
        key = (row["corpus"], row["page"], int(row["lr_dpi"]), int(row["shift"]))
        pair = RegisteredPair(read_image(row["lr_path"]), read_image(row["hr_path"]),
                              (int(row["ty"]), int(row["tx"])), source="real",
                              meta={"page": row["page"], "dpi": int(row["lr_dpi"]),
                                    "shift": int(row["shift"])})
        aligned = apply_translation(pair)
        patches += extract_patches(aligned, cfg["data.patch_size"], split=split_of.get(key, "train"))
    write_patch_store(store, patches)
    print(f"extracted {len(patches)} real patches into {store}")
    write_run_meta(out, args, cfg, {"patches": len(patches)})
    return 0


def cmd_simulate(args, cfg, out):
    store = _require(cfg, "data.patch_store")
    real = read_patch_store(store, source="real")
    if args.dry_run:
        print(f"simulate: {len(real)} HR patches -> {store}/simulated")
        return 0
    sim = [PatchPair(simulate_lr(p.hr_patch), p.hr_patch, p.origin, p.split, "simulated", p.meta)
           for p in real]
    write_patch_store(store, real + sim)
    print(f"simulated {len(sim)} LR patches into {store}")
    write_run_meta(out, args, cfg, {"patches": len(sim)})
    return 0


# ------------------------------------------------------------------ training

def train_config(cfg, variant, init_checkpoint=None):
    gen = replace(GeneratorConfig.desk(), num_residual_blocks=cfg["generator.num_residual_blocks"],
                  trunk_channels=cfg["generator.trunk_channels"],
                  batch_norm=cfg["generator.batch_norm"])
    stage = "real_finetune" if variant.training_data == "real" else "synthetic_finetune"
    return TrainConfig(variant=variant, epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                       learning_rate=cfg["train.lr"], adam_betas=(cfg["train.beta1"], cfg["train.beta2"]),
                       seed=cfg["train.seed"], init_checkpoint=init_checkpoint, stage=stage,
                       generator=gen, temperature=cfg["train.temperature"], k_top=cfg["train.k_top"],
                       keypoint_form=cfg["train.keypoint_form"]).validate()


def training_data(cfg):
    store = _require(cfg, "data.patch_store")
    if not (store / "index.csv").exists():
        raise FileNotFoundError(f"patch store {store} has no index.csv")
    data = {}
    for source in ("real", "simulated"):
        items = read_patch_store(store, split="train", source=source)
        data[source] = _subsample(items, cfg["data.max_patches"], cfg["train.seed"])
    return data


def ensure_init(args, cfg, out, data, bundle):
    """The initial checkpoint: configured, or an MSE-only warm-up on simulated pairs."""
    if cfg["train.init_checkpoint"]:
        path = Path(cfg["train.init_checkpoint"])
        if not path.exists():
            raise ConfigError("train.init_checkpoint", f"{path} not found")
        return path
    ckpt = out / "M_B" / "checkpoint"
    if args.resume and ckpt.exists():
        return ckpt
    base = replace(train_config(cfg, VariantSpec("simulated")), epochs=cfg["train.warmup_epochs"])
    if not data["simulated"]:
        raise ConfigError("data.patch_store", "no simulated training patches for warm-up")
    warmup(base, data["simulated"], out / "M_B", bundle)
    return ckpt


def _train_variants(args, cfg, out, variants):
    data = training_data(cfg)
    if args.dry_run:
        print(f"train: {', '.join(v.name for v in variants)} on "
              f"{len(data['real'])} real / {len(data['simulated'])} simulated patches -> {out}")
        return 0
    bundle = bundle_from_config(cfg, cfg["supervisor.seed"])
    init = ensure_init(args, cfg, out, data, bundle)
    for v in variants:
        items = data[v.training_data]
        if not items:
            raise ConfigError("data.patch_store", f"no {v.training_data} training patches")
        tc = train_config(cfg, v, str(init))
        result = run_training(tc, items, out / v.name, bundle, resume=args.resume)
        print(f"{v.name}: final total {result.loss_rows[-1]['total']:.6g}")
    write_run_meta(out, args, cfg, {"variants": [v.name for v in variants],
                                    "init_checkpoint": str(init)})
    return 0


def cmd_train(args, cfg, out):
    label = args.only or cfg["train.variant"]
    return _train_variants(args, cfg, out, [VariantSpec.parse(label)])


def cmd_train_matrix(args, cfg, out):
    variants = enumerate_variants()
    if args.only:
        wanted = {VariantSpec.parse(lab).name for lab in args.only.split(",")}
        variants = [v for v in variants if v.name in wanted]
    return _train_variants(args, cfg, out, variants)


# ------------------------------------------------------------------ evaluation

def discover_models(runs):
    if not runs.is_dir():
        raise FileNotFoundError(f"runs directory {runs} not found")
    models = {d.name: d / "checkpoint" for d in sorted(runs.iterdir())
              if d.is_dir() and (d / "checkpoint").exists()}
    if not models:
        raise ConfigError("eval.runs", f"no run directories with a checkpoint under {runs}")
    return models


def cmd_evaluate(args, cfg, out):
    models = discover_models(_require(cfg, "eval.runs"))
    store = _require(cfg, "data.patch_store")
    test_sets = {}
    for regime in ("simulated", "real"):
        items = read_patch_store(store, split=cfg["eval.split"], source=regime)
        items = _subsample(items, cfg["eval.max_images"], cfg["train.seed"])
        for p in items:
            p.meta["image_id"] = f"{p.meta['page']}_{p.meta['shift']}_{p.origin[0]}_{p.origin[1]}"
        if items:
            test_sets[regime] = items
    if not test_sets:
        raise ConfigError("eval.split", f"no {cfg['eval.split']!r} patches in {store}")
    if args.dry_run:
        print(f"evaluate: {len(models)} models + Int. on "
              + ", ".join(f"{k}={len(v)}" for k, v in test_sets.items()))
        return 0
    bundle = bundle_from_config(cfg, cfg["supervisor.seed"])
    detector = CtpnDetector(bundle.ctpn, cfg["eval.threshold"])
    ev = evaluate_models(models, test_sets, detector, out)
    for regime, table in ev.summary.items():
        print(f"[{regime}]")
        print(table.to_string(index=False))
    write_run_meta(out, args, cfg, {"models": list(models)})
    return 0


def cmd_compare(args, cfg, out):
    raw = cfg["compare.metrics"]
    if not raw:
        raise ConfigError("compare.metrics", "must list metrics.csv files or directories")
    paths = []
    for item in raw.split(","):
        p = Path(item.strip())
        paths += sorted(p.glob("*/metrics.csv")) + sorted(p.glob("metrics.csv")) if p.is_dir() else [p]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"metrics file {p} not found")
    if not paths:
        raise FileNotFoundError(f"no metrics.csv under {raw}")
    frame = read_metrics(paths)
    if frame["model_label"].nunique() < 2:
        raise ContractError("compare needs metrics for at least two models")
    if args.dry_run:
        print(f"compare: {frame['model_label'].nunique()} models from {len(paths)} files")
        return 0
    compare(frame, out)
    write_run_meta(out, args, cfg, {"metrics_files": [str(p) for p in paths]})
    return 0


HANDLERS = {"register": cmd_register, "extract": cmd_extract, "simulate": cmd_simulate,
            "train": cmd_train, "train-matrix": cmd_train_matrix, "evaluate": cmd_evaluate,
            "compare": cmd_compare}


def build_parser():
    p = argparse.ArgumentParser(prog="tdsr", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--out", required=True, help="output directory (created if absent)")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--jobs", type=int, default=1, help="torch thread count")
    p.add_argument("--only", help="variant label(s), comma separated, e.g. M+++^R")
    p.add_argument("--dry-run", action="store_true", help="print the plan, write nothing")
    p.add_argument("--resume", action="store_true", help="continue interrupted training runs")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args, base):
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in base:
            raise ConfigError(key, "unknown configuration key")
        over[key] = _coerce(key, value, base[key])
    if args.seed is not None:
        over["train.seed"] = args.seed
    return over


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        torch.set_num_threads(args.jobs)
        base = load_config(args.config, args.profile)
        cfg = load_config(args.config, args.profile, _overrides(args, base))
        np.random.seed(cfg["train.seed"])
        out = Path(args.out)
        if args.dry_run:
            print(format_config(cfg), end="")
        else:
            out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](args, cfg, out) or 0
    except INPUT_ERRORS as exc:
        print(f"tdsr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        traceback.print_exc()
        print(f"tdsr {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
