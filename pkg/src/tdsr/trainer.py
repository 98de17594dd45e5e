"""Training loop, DWA scheduling, two-stage fine-tuning and the variant matrix."""
import csv
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_generator, save_generator
from .dwa import DwaState, record_epoch, update_weights
from .errors import ConfigError, ContractError, NonFiniteLossError
from .generator import GeneratorConfig, build_generator, to_signed
from .losses import BASE_COMPONENTS, COMPONENTS, LossBreakdown, compute_losses, total_loss
from .supervisors import KEYNET_K_TOP, parameter_digest, surrogate_bundle

log = logging.getLogger(__name__)

DATA_REGIMES = ("real", "simulated")
_LABEL = re.compile(r"^M([+-])([+-])([+-])\^([RS])$")


@dataclass(frozen=True)
class VariantSpec:
    training_data: str = "real"
    use_crnn: bool = True
    use_keynet: bool = True
    use_hue: bool = True

    def __post_init__(self):
        if self.training_data not in DATA_REGIMES:
            raise ConfigError("training_data", f"expected one of {DATA_REGIMES}")

    @property
    def name(self):
        sign = lambda b: "+" if b else "-"
        suffix = "R" if self.training_data == "real" else "S"
        return f"M{sign(self.use_crnn)}{sign(self.use_keynet)}{sign(self.use_hue)}^{suffix}"

    @property
    def components(self):
        extra = [c for c, on in (("crnn", self.use_crnn), ("keynet", self.use_keynet),
                                 ("hue", self.use_hue)) if on]
        return BASE_COMPONENTS + tuple(extra)

    @classmethod
    def parse(cls, label):
        m = _LABEL.match(label.strip())
        if not m:
            raise ConfigError("variant", f"cannot parse variant label {label!r}")
        crnn, key, hue, data = m.groups()
        return cls("real" if data == "R" else "simulated", crnn == "+", key == "+", hue == "+")


def enumerate_variants():
    """The 16 training setups: data regime x CRNN x Key.Net x Hue, real first."""
    return [VariantSpec(data, c, k, h)
            for data in DATA_REGIMES
            for c in (True, False) for k in (True, False) for h in (True, False)]


@dataclass
class TrainConfig:
    variant: VariantSpec = field(default_factory=VariantSpec)
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    seed: int = 0
    init_checkpoint: str = None
    stage: str = "real_finetune"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig.desk)
    temperature: float = 2.0
    k_top: int = KEYNET_K_TOP
    components: tuple = None
    keypoint_form: str = "msip"

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if self.stage not in ("real_finetune", "synthetic_finetune"):
            raise ConfigError("stage", f"unknown stage {self.stage!r}")
        if self.components is not None and not set(self.components) <= set(COMPONENTS):
            raise ConfigError("components", f"unknown components in {self.components}")
        self.generator.validate()
        return self

    @property
    def enabled(self):
        comps = self.components if self.components is not None else self.variant.components
        return tuple(c for c in COMPONENTS if c in comps)

    @property
    def label(self):
        return "M_B" if self.components == ("mse",) else self.variant.name

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.name
        return d


@dataclass
class Batch:
    lr: torch.Tensor
    hr: torch.Tensor
    source: str


def _arrays(pair):
    if hasattr(pair, "lr_patch"):
        return pair.lr_patch, pair.hr_patch
    return pair.lr, pair.hr


def make_batches(pairs, batch_size, generator=None, dtype=torch.float32):
    """Group pairs into batches; shuffled when a torch ``generator`` is given."""
    n = len(pairs)
    order = torch.randperm(n, generator=generator).tolist() if generator is not None else range(n)
    order = list(order)
    batches = []
    for k in range(0, n, batch_size):
        chunk = [pairs[i] for i in order[k:k + batch_size]]
        lrs, hrs = zip(*(_arrays(p) for p in chunk))
        sources = {getattr(p, "source", "real") for p in chunk}
        if len(sources) != 1:
            raise ContractError(f"batch mixes data sources {sorted(sources)}")
        batches.append(Batch(torch.as_tensor(np.stack(lrs), dtype=dtype),
                             torch.as_tensor(np.stack(hrs), dtype=dtype), sources.pop()))
    return batches


def train_epoch(model, bundle, batches, weights, optimizer, enabled=None, k_top=KEYNET_K_TOP,
                epoch=0, expected_source=None, keypoint_form="msip"):
    """One pass over ``batches``; returns batch-size-weighted mean losses and mean total."""
    enabled = tuple(weights) if enabled is None else tuple(enabled)
    if set(weights) != set(enabled):
        raise ContractError(f"weights {sorted(weights)} do not match components {sorted(enabled)}")
    model.train()
    sums = {c: 0.0 for c in enabled}
    total_sum, count = 0.0, 0
    for b_idx, batch in enumerate(batches):
        if expected_source is not None and batch.source != expected_source:
            raise ContractError(f"batch {b_idx} has source {batch.source!r}, "
                                f"expected {expected_source!r}")
        sr = model(to_signed(batch.lr))
        breakdown = compute_losses(sr, batch.hr, batch.lr, bundle, enabled, k_top, keypoint_form)
        loss = total_loss(breakdown, weights)
        vals = {c: float(breakdown[c].detach()) for c in enabled}
        loss_value = float(loss.detach())
        if not math.isfinite(loss_value) or not all(math.isfinite(v) for v in vals.values()):
            raise NonFiniteLossError({"epoch": epoch, "batch": b_idx, "breakdown": vals})
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        n = batch.lr.shape[0]
        for c in enabled:
            sums[c] += vals[c] * n
        total_sum += loss_value * n
        count += n
    means = LossBreakdown({c: s / count for c, s in sums.items()}, enabled)
    return means, total_sum / count


def module_digest(module):
    return parameter_digest(module)


@dataclass
class RunResult:
    model: torch.nn.Module
    dwa: DwaState
    loss_rows: list
    weight_rows: list
    out_dir: Path = None
    meta: dict = field(default_factory=dict)

    @property
    def checkpoint(self):
        return None if self.out_dir is None else self.out_dir / "checkpoint"


def _fmt(v):
    return "" if v is None else repr(float(v))


def loss_row(epoch, means, total):
    row = {"epoch": epoch}
    for c in COMPONENTS:
        row[c] = means.values[c] if c in means.enabled else None
    row["total"] = total
    return row


def weight_row(epoch, weights):
    row = {"epoch": epoch}
    for c in COMPONENTS:
        row[f"λ_{c}"] = weights.get(c)
    return row


def write_rows(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([r["epoch"]] + [_fmt(r[c]) for c in columns[1:]])


LOSS_COLUMNS = ["epoch", *COMPONENTS, "total"]
WEIGHT_COLUMNS = ["epoch", *(f"λ_{c}" for c in COMPONENTS)]


def _initial_model(config):
    if config.init_checkpoint:
        path = Path(config.init_checkpoint)
        if not path.exists():
            raise ConfigError("init_checkpoint", f"{path} does not exist")
        return load_generator(path)
    return build_generator(config.generator, config.seed)


def run_training(config, data, out_dir=None, bundle=None, resume=False, model=None):
    """Epoch loop of {DWA weights -> train_epoch -> record epoch means}.

    Writes ``checkpoint``, ``losses.csv``, ``weights.csv``, ``run_meta.json`` and
    a ``resume.pt`` state into ``out_dir`` (when given) after every epoch.
    """
    config.validate()
    if not data:
        raise ConfigError("data", "training data is empty")
    torch.manual_seed(config.seed)
    bundle = bundle if bundle is not None else surrogate_bundle(0)
    model = model if model is not None else _initial_model(config)
    model.float()
    enabled = config.enabled
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=tuple(config.adam_betas))
    dwa = DwaState(enabled, config.temperature)
    shuffle = torch.Generator().manual_seed(config.seed)
    loss_rows, weight_rows, start = [], [], 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    initial_digest = module_digest(model)
    fingerprint = bundle.fingerprint()
    if resume and out_dir is not None and (out_dir / "resume.pt").exists():
        state = torch.load(out_dir / "resume.pt", weights_only=False)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        dwa.history = state["dwa_history"]
        shuffle.set_state(state["shuffle"])
        loss_rows, weight_rows, start = state["loss_rows"], state["weight_rows"], state["epoch"]
        initial_digest = state["initial_digest"]
        log.info("resuming %s at epoch %d", out_dir, start)
    expected = config.variant.training_data if config.components is None else None
    meta = {
        "config": config.to_dict(), "seed": config.seed, "label": config.label,
        "supervisor_fingerprint": fingerprint, "code_version": __version__,
        "generator_digest_initial": initial_digest,
    }
    for t in range(start, config.epochs):
        weights = update_weights(dwa, t)
        batches = make_batches(data, config.batch_size, shuffle)
        means, total = train_epoch(model, bundle, batches, weights, optimizer, enabled,
                                   config.k_top, t, expected, config.keypoint_form)
        record_epoch(dwa, means)
        loss_rows.append(loss_row(t, means, total))
        weight_rows.append(weight_row(t, weights))
        log.info("%s epoch %d total %.6g", config.label, t, total)
        if out_dir is not None:
            _write_outputs(out_dir, model, loss_rows, weight_rows, meta)
            torch.save({"model": model.state_dict(), "optimizer": optimizer.state_dict(),
                        "dwa_history": dwa.history, "shuffle": shuffle.get_state(),
                        "loss_rows": loss_rows, "weight_rows": weight_rows, "epoch": t + 1,
                        "initial_digest": initial_digest}, out_dir / "resume.pt")
    if bundle.fingerprint() != fingerprint:
        raise RuntimeError("supervisor parameters changed during training")
    meta["generator_digest_final"] = module_digest(model)
    meta["supervisor_fingerprint_final"] = bundle.fingerprint()
    if out_dir is not None:
        _write_outputs(out_dir, model, loss_rows, weight_rows, meta)
    return RunResult(model, dwa, loss_rows, weight_rows, out_dir, meta)


def _write_outputs(out_dir, model, loss_rows, weight_rows, meta):
    save_generator(out_dir / "checkpoint", model)
    write_rows(out_dir / "losses.csv", loss_rows, LOSS_COLUMNS)
    write_rows(out_dir / "weights.csv", weight_rows, WEIGHT_COLUMNS)
    with open(out_dir / "run_meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=str)


def run_two_stage(base_config, real_data, synthetic_data, out_dir=None, bundle=None):
    """Fine-tune the same initial checkpoint independently on real and on simulated pairs.

    Stage 2 restarts from ``init_checkpoint``, not from stage 1's result.
    Returns ``{"real": RunResult, "simulated": RunResult}``.
    """
    if not base_config.init_checkpoint or not Path(base_config.init_checkpoint).exists():
        raise ConfigError("init_checkpoint", "two-stage fine-tuning needs an existing checkpoint")
    results = {}
    for data_kind, stage, data in (("real", "real_finetune", real_data),
                                   ("simulated", "synthetic_finetune", synthetic_data)):
        cfg = replace(base_config, variant=replace(base_config.variant, training_data=data_kind),
                      stage=stage)
        sub = None if out_dir is None else Path(out_dir) / cfg.label
        results[data_kind] = run_training(cfg, data, sub, bundle)
    return results


def warmup(config, data, out_dir=None, bundle=None):
    """MSE-only pretraining standing in for the large-corpus initialisation (the M_B baseline)."""
    cfg = replace(config, components=("mse",))
    return run_training(cfg, data, out_dir, bundle)
