"""SRResNet generator for 4x single-image super-resolution."""
import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .errors import ConfigError, InputContractError, ShapeError

RANGE_TOL = 1e-6
PRELU_INIT = 0.25


@dataclass(frozen=True)
class GeneratorConfig:
    num_residual_blocks: int = 4
    trunk_channels: int = 32
    scale_factor: int = 4
    input_channels: int = 3
    head_kernel: int = 9
    batch_norm: bool = True

    @classmethod
    def desk(cls, **overrides):
        return cls(**{"num_residual_blocks": 4, "trunk_channels": 32, **overrides})

    @classmethod
    def paper(cls, **overrides):
        return cls(**{"num_residual_blocks": 16, "trunk_channels": 64, **overrides})

    def validate(self):
        if not isinstance(self.num_residual_blocks, int) or self.num_residual_blocks < 1:
            raise ConfigError("num_residual_blocks", "must be a positive integer")
        if not isinstance(self.trunk_channels, int) or self.trunk_channels < 1:
            raise ConfigError("trunk_channels", "must be a positive integer")
        s = self.scale_factor
        if not isinstance(s, int) or s < 2 or s & (s - 1):
            raise ConfigError("scale_factor", f"must be a power of two, got {s}")
        if self.input_channels != 3:
            raise ConfigError("input_channels", "must be 3")
        if self.head_kernel < 1 or self.head_kernel % 2 == 0:
            raise ConfigError("head_kernel", "must be a positive odd integer")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ConfigError(k, "unknown generator config key")
            if isinstance(v, str):
                v = v.strip().lower() in ("1", "true", "yes") if kinds[k] in (bool, "bool") else int(v)
            out[k] = v
        return cls(**out)


def pixel_shuffle(x, r):
    """Rearrange (..., C*r*r, H, W) into (..., C, r*H, r*W).

    ``out[c, r*i + a, r*j + b] = x[c*r*r + a*r + b, i, j]``.
    """
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channels {c} not divisible by r^2={r * r}")
    oc = c // (r * r)
    x = x.reshape(*lead, oc, r, r, h, w)
    n = len(lead)
    x = x.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return x.reshape(*lead, oc, h * r, w * r)


def pixel_unshuffle(x, r):
    """Inverse of :func:`pixel_shuffle`."""
    *lead, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by {r}")
    x = x.reshape(*lead, c, h // r, r, w // r, r)
    n = len(lead)
    x = x.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return x.reshape(*lead, c * r * r, h // r, w // r)


class PixelShuffle(nn.Module):
    def __init__(self, r):
        super().__init__()
        self.r = r

    def forward(self, x):
        return pixel_shuffle(x, self.r)


def _norm(channels, enabled):
    return nn.BatchNorm2d(channels) if enabled else nn.Identity()


class ResidualBlock(nn.Module):
    """conv3x3 -> norm -> PReLU -> conv3x3 -> norm, plus identity skip."""

    def __init__(self, channels, batch_norm=True):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = _norm(channels, batch_norm)
        self.act = nn.PReLU(init=PRELU_INIT)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = _norm(channels, batch_norm)

    def transform(self, x):
        return self.bn2(self.conv2(self.act(self.bn1(self.conv1(x)))))

    def forward(self, x):
        return x + self.transform(x)


def residual_block_apply(block, f_prev):
    if f_prev.shape[-3] != block.channels:
        raise ShapeError(f"expected {block.channels} channels, got {f_prev.shape[-3]}")
    return block(f_prev)


class UpsampleBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels * 4, 3, padding=1)
        self.shuffle = PixelShuffle(2)
        self.act = nn.PReLU(init=PRELU_INIT)

    def forward(self, x):
        return self.act(self.shuffle(self.conv(x)))


class SRResNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        c, k = config.trunk_channels, config.head_kernel
        self.head = nn.Conv2d(config.input_channels, c, k, padding=k // 2)
        self.head_act = nn.PReLU(init=PRELU_INIT)
        self.blocks = nn.ModuleList(
            ResidualBlock(c, config.batch_norm) for _ in range(config.num_residual_blocks))
        self.merge = nn.Conv2d(c, c, 3, padding=1)
        self.merge_bn = _norm(c, config.batch_norm)
        self.upsample = nn.Sequential(
            *[UpsampleBlock(c) for _ in range(int(math.log2(config.scale_factor)))])
        self.tail = nn.Conv2d(c, 3, k, padding=k // 2)

    def trunk(self, x):
        features = self.head_act(self.head(x))
        h = features
        for block in self.blocks:
            h = block(h)
        return features + self.merge_bn(self.merge(h))

    def forward(self, lr):
        """Super-resolve a signed-range ``(3, H, W)`` or ``(B, 3, H, W)`` tensor."""
        check_signed_input(lr)
        squeeze = lr.dim() == 3
        x = lr.unsqueeze(0) if squeeze else lr
        out = torch.tanh(self.tail(self.upsample(self.trunk(x))))
        return out.squeeze(0) if squeeze else out


def check_signed_input(x):
    if x.dim() not in (3, 4) or x.shape[-3] != 3:
        raise InputContractError(f"expected 3-channel image, got shape {tuple(x.shape)}")
    with torch.no_grad():
        lo, hi = float(x.min()), float(x.max())
    if lo < -1.0 - RANGE_TOL or hi > 1.0 + RANGE_TOL:
        raise InputContractError(f"input outside signed range [-1, 1]: [{lo:.4g}, {hi:.4g}]")


def init_weights(model, seed):
    gen = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=PRELU_INIT, mode="fan_in",
                                    nonlinearity="leaky_relu", generator=gen)
            nn.init.zeros_(m.bias)
    return model


def build_generator(config, seed=0):
    """Build a generator with deterministic He-style initialisation."""
    config.validate()
    return init_weights(SRResNet(config), seed)


def forward(model, lr):
    return model(lr)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())


def to_signed(x):
    return x * 2.0 - 1.0


def to_unit(x):
    return (x + 1.0) * 0.5
