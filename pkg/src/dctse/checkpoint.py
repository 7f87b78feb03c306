"""Binary checkpoint container for U-net parameters and optimiser state.

Layout::

    b"DCTSECK1"                   8-byte magic
    uint64 little-endian          header length in bytes
    UTF-8 JSON header             config echo, layout table, seed, step, ...
    float32 little-endian data    every tensor in layout order, then the
                                  Adam first and second moments (if saved)
                                  in the order of ``header["adam"]["names"]``

All tensors are stored as 32-bit floats; a float64 parameter set is rounded
on save. The roundtrip of a float32 set is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import InvalidArgumentError, MalformedHeaderError
from .spectral import FrameConfig
from .training import AdamState, Enhancer
from .unet import ParameterSet, UNetConfig, init_parameters

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "MAGIC"]

MAGIC = b"DCTSECK1"
FORMAT_VERSION = 1
DTYPE = "<f4"


@dataclass
class Checkpoint:
    model: Enhancer
    adam: Optional[AdamState] = None
    seed: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def _blob(t: torch.Tensor) -> bytes:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=DTYPE).tobytes()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    params = ckpt.model.params
    header = {
        "format": "dctse-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "unet": ckpt.model.unet.to_dict(),
        "frame": asdict(ckpt.model.frame),
        "layout": params.layout(),
        "frozen": sorted(params.frozen),
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "step": ckpt.adam.step if ckpt.adam else 0,
        "extra": ckpt.extra,
    }
    blobs = [_blob(params[name]) for name in params.names()]
    if ckpt.adam is not None:
        names = [n for n in params.names("param") if n in ckpt.adam.m]
        header["adam"] = dict(ckpt.adam.hyper(), names=names)
        blobs += [_blob(ckpt.adam.m[n]) for n in names]
        blobs += [_blob(ckpt.adam.v[n]) for n in names]
    text = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(text)) + text + b"".join(blobs))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC or len(data) < 16:
        raise MalformedHeaderError(f"{path}: not a dctse checkpoint")
    (size,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION or header.get("dtype") != "float32-le":
        raise MalformedHeaderError(f"{path}: unsupported checkpoint version or dtype")
    payload = np.frombuffer(data, dtype=DTYPE, offset=16 + size)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64))
        if pos + n > payload.size:
            raise MalformedHeaderError(f"{path}: data section truncated")
        out = torch.from_numpy(payload[pos : pos + n].astype(np.float32).reshape(shape))
        pos += n
        return out

    tensors, kinds, shapes = {}, {}, {}
    for entry in header["layout"]:
        tensors[entry["name"]] = take(entry["shape"])
        kinds[entry["name"]] = entry["kind"]
        shapes[entry["name"]] = entry["shape"]
    params = ParameterSet(tensors, kinds)
    params.frozen = set(header["frozen"])

    adam = None
    if "adam" in header:
        hyper = {k: header["adam"][k] for k in ("lr", "beta1", "beta2", "eps")}
        names = header["adam"]["names"]
        adam = AdamState(**hyper, step=header["step"])
        adam.m = {n: take(shapes[n]) for n in names}
        adam.v = {n: take(shapes[n]) for n in names}
    if pos != payload.size:
        raise MalformedHeaderError(f"{path}: {payload.size - pos} trailing values after data section")

    unet = UNetConfig.from_dict(header["unet"])
    frame = FrameConfig(**header["frame"])
    expected = {e["name"]: e["shape"] for e in init_parameters(unet).layout()}
    if expected != shapes:
        raise InvalidArgumentError(f"{path}: layout table does not match the stored U-net config")
    return Checkpoint(Enhancer(unet, params, frame), adam, header["seed"], header["epoch"], header.get("extra", {}))
