"""Checkpoint archive: config key-values, little-endian float32 tensors, checksum.

Layout (a zip container with fixed timestamps, so identical content gives
identical bytes)::

    config.txt     key = value lines
    tensors.txt    one "name<TAB>d0,d1,..." line per tensor, in storage order
    tensors.bin    concatenated '<f4' payloads
    checksum.txt   sha256 over config.txt + tensors.txt + tensors.bin
"""
import hashlib
import io
import zipfile

import numpy as np
import torch

from .errors import ChecksumError, ShapeError

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in config.items())


def parse_config(text):
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def save_archive(path, config, tensors):
    """Write ``tensors`` (name -> tensor/array) with a ``config`` dict."""
    header = io.StringIO()
    payload = io.BytesIO()
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        header.write(f"{name}\t{','.join(str(d) for d in arr.shape)}\n")
        payload.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    cfg_b = format_config(config).encode()
    hdr_b = header.getvalue().encode()
    bin_b = payload.getvalue()
    digest = hashlib.sha256(cfg_b + hdr_b + bin_b).hexdigest()
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "config.txt", cfg_b)
        _member(zf, "tensors.txt", hdr_b)
        _member(zf, "tensors.bin", bin_b)
        _member(zf, "checksum.txt", digest + "\n")
    return digest


def load_archive(path):
    """Return ``(config, tensors)``; raises :class:`ChecksumError` on corruption."""
    with zipfile.ZipFile(path) as zf:
        cfg_b = zf.read("config.txt")
        hdr_b = zf.read("tensors.txt")
        bin_b = zf.read("tensors.bin")
        expected = zf.read("checksum.txt").decode().strip()
    if hashlib.sha256(cfg_b + hdr_b + bin_b).hexdigest() != expected:
        raise ChecksumError(f"checksum mismatch in {path}")
    tensors = {}
    offset = 0
    for line in hdr_b.decode().splitlines():
        name, _, dims = line.partition("\t")
        shape = tuple(int(d) for d in dims.split(",") if d)
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(bin_b, dtype="<f4", count=n, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy())
        offset += 4 * n
    if offset != len(bin_b):
        raise ChecksumError(f"payload size mismatch in {path}")
    return parse_config(cfg_b.decode()), tensors


def load_state_into(module, tensors):
    """Copy ``tensors`` into ``module``'s state dict, checking names and shapes."""
    state = module.state_dict()
    missing = set(state) - set(tensors)
    extra = set(tensors) - set(state)
    if missing or extra:
        raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, ref in state.items():
        t = tensors[name]
        if tuple(t.shape) != tuple(ref.shape):
            raise ShapeError(f"{name}: shape {tuple(t.shape)} != expected {tuple(ref.shape)}")
        state[name] = t.to(ref.dtype)
    module.load_state_dict(state)
    return module


def save_generator(path, model):
    return save_archive(path, model.config.to_dict(), model.state_dict())


def load_generator(path):
    from .generator import GeneratorConfig, SRResNet

    config, tensors = load_archive(path)
    model = SRResNet(GeneratorConfig.from_dict(config))
    return load_state_into(model, tensors)
