"""Flat ``section.key = value`` run configuration with desk and paper profiles."""
import configparser
from pathlib import Path

from .errors import ConfigError

PROFILES = {
    "desk": {
        "generator.num_residual_blocks": 4,
        "generator.trunk_channels": 32,
        "generator.batch_norm": True,
        "train.variant": "M+++^R",
        "train.epochs": 20,
        "train.batch_size": 4,
        "train.lr": 1e-4,
        "train.beta1": 0.9,
        "train.beta2": 0.999,
        "train.temperature": 2.0,
        "train.k_top": 64,
        "train.keypoint_form": "msip",
        "train.init_checkpoint": "",
        "train.warmup_epochs": 20,
        "train.seed": 0,
        "data.manifest": "",
        "data.registration": "",
        "data.patch_store": "",
        "data.patch_size": 64,
        "data.max_patches": 64,
        "data.margin": 32,
        "data.radius": 16,
        "data.samples": 200,
        "data.validation_pairs": 20,
        "eval.runs": "",
        "eval.split": "test",
        "eval.threshold": 0.7,
        "eval.max_images": 16,
        "compare.metrics": "",
        "supervisor.ctpn": "surrogate",
        "supervisor.crnn": "surrogate",
        "supervisor.keynet": "surrogate",
        "supervisor.seed": 0,
    },
}
PROFILES["paper"] = {
    **PROFILES["desk"],
    "generator.num_residual_blocks": 16,
    "generator.trunk_channels": 64,
    "data.patch_size": 256,
    "data.max_patches": 0,
    "eval.max_images": 0,
}


def _coerce(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot interpret {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config_text(text, profile="desk"):
    if profile not in PROFILES:
        raise ConfigError("profile", f"unknown profile {profile!r}")
    defaults = PROFILES[profile]
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    cfg = dict(defaults)
    for key, raw in parser["run"].items():
        if key not in defaults:
            raise ConfigError(key, "unknown configuration key")
        cfg[key] = _coerce(key, raw, defaults[key])
    return cfg


def load_config(path=None, profile="desk", overrides=None):
    """Profile defaults, then the file at ``path``, then ``overrides``."""
    text = ""
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"{path} not found")
        text = path.read_text()
    cfg = parse_config_text(text, profile)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(key, "unknown configuration key")
        cfg[key] = value
    return cfg


def format_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in sorted(cfg.items()))
