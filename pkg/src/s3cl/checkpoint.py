"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u32 version, u64 header length, a JSON
header (config, epoch, optimizer scalars, array manifest), then the raw
little-endian bytes of every tensor in manifest order. Round-trips are
bit-exact; files are written atomically (temp file + rename).
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import DataError
from .nn import AdamState, ModelParams
from .semantic import PrototypeState

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"S3CLCKPT"
VERSION = 1

_DTYPES = {"float64": "<f8", "int64": "<i8"}


@dataclass
class Checkpoint:
    """Everything needed to continue training bit-identically."""

    config: TrainConfig
    epoch: int  # next epoch to run
    params: ModelParams
    adam: AdamState
    prototypes: PrototypeState | None


def _manifest_arrays(params, adam, prototypes):
    arrays = {}
    for key, value in params.trainable().items():
        arrays[f"param.{key}"] = value
    for key in sorted(params.momentum):
        arrays[f"momentum.{key}"] = params.momentum[key]
    for key in params.trainable():
        arrays[f"adam.m.{key}"] = adam.m[key]
        arrays[f"adam.v.{key}"] = adam.v[key]
    if prototypes is not None:
        arrays["proto.c"] = prototypes.c
        arrays["proto.z"] = prototypes.z
    return arrays


def save_checkpoint(path, config, epoch, params, adam, prototypes=None):
    arrays = _manifest_arrays(params, adam, prototypes)
    manifest = []
    for name, value in arrays.items():
        kind = "int64" if np.issubdtype(value.dtype, np.integer) else "float64"
        manifest.append({"name": name, "shape": list(value.shape), "dtype": kind})
    header = {
        "config": config.to_dict(),
        "epoch": int(epoch),
        "adam": {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
        },
        "momentum_keys": sorted(params.momentum),
        "prototype_k": None if prototypes is None else int(prototypes.k),
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for entry in manifest:
            data = np.ascontiguousarray(arrays[entry["name"]], dtype=_DTYPES[entry["dtype"]])
            fh.write(data.tobytes())
    os.replace(tmp, path)


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        raise DataError(f"{path}: truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), path, "magic") != MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic header)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, path, "header length"))
        header = json.loads(_read_exact(fh, header_len, path, "header"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            raw = _read_exact(fh, count * dtype.itemsize, path, entry["name"])
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()

    config = TrainConfig.from_dict(header["config"])
    params = ModelParams(
        encoder_w=arrays["param.encoder_w"],
        proj_w1=arrays["param.proj_w1"],
        proj_b1=arrays["param.proj_b1"],
        proj_w2=arrays["param.proj_w2"],
        proj_b2=arrays["param.proj_b2"],
    )
    for key in header["momentum_keys"]:
        params.momentum[key] = arrays[f"momentum.{key}"]
    meta = header["adam"]
    adam = AdamState(
        lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], t=meta["t"]
    )
    for key in params.trainable():
        adam.m[key] = arrays[f"adam.m.{key}"]
        adam.v[key] = arrays[f"adam.v.{key}"]
    prototypes = None
    if header["prototype_k"] is not None:
        prototypes = PrototypeState(
            c=arrays["proto.c"], z=arrays["proto.z"], k=header["prototype_k"]
        )
    return Checkpoint(
        config=config, epoch=header["epoch"], params=params, adam=adam, prototypes=prototypes
    )
