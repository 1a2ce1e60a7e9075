"""Checkpoint files: a JSON header followed by a float32 parameter blob.

Layout: magic b"VCKP", u32 little-endian header length, UTF-8 JSON header,
then every tensor listed in the header as little-endian float32, in order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .networks import FilterParams, ProjectorParams
from .trainer import TrainConfig

MAGIC = b"VCKP"


def encode_checkpoint(proj: ProjectorParams, filt: FilterParams, config: TrainConfig) -> bytes:
    tensors = [("projector." + k, v) for k, v in proj.named().items()]
    tensors += [("filter." + k, v) for k, v in filt.named().items()]
    header = {
        "format": "vidsum-checkpoint",
        "version": 1,
        "dims": {
            "input_dim": proj.input_dim,
            "proj_dim": proj.proj_dim,
            "hidden_dim": proj.hidden_dim,
            "filter_hidden": filt.w1.shape[1],
        },
        "config": dataclasses.asdict(config),
        "seed": config.seed,
        "tensors": [[name, list(v.shape)] for name, v in tensors],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for _, v in tensors)
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + blob


def decode_checkpoint(buf: bytes) -> tuple[ProjectorParams, FilterParams, TrainConfig]:
    if buf[:4] != MAGIC:
        raise FormatError("not a vidsum checkpoint")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    try:
        header = json.loads(buf[8:8 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    offset = 8 + hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        end = offset + 4 * n
        if end > len(buf):
            raise FormatError("checkpoint blob is truncated")
        arrays[name] = np.frombuffer(buf[offset:end], dtype="<f4").astype(np.float32).reshape(shape)
        offset = end
    if offset != len(buf):
        raise FormatError("trailing bytes after checkpoint blob")
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    config = TrainConfig(**{k: v for k, v in header["config"].items() if k in known})
    proj = ProjectorParams(**{k[10:]: v for k, v in arrays.items() if k.startswith("projector.")})
    filt = FilterParams(**{k[7:]: v for k, v in arrays.items() if k.startswith("filter.")})
    return proj, filt, config


def save_checkpoint(path, proj: ProjectorParams, filt: FilterParams, config: TrainConfig) -> None:
    Path(path).write_bytes(encode_checkpoint(proj, filt, config))


def load_checkpoint(path) -> tuple[ProjectorParams, FilterParams, TrainConfig]:
    return decode_checkpoint(Path(path).read_bytes())
