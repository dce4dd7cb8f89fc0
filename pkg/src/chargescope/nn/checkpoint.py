"""Model checkpoint container.

Layout: the ASCII line ``chargescope-model v1``, one line of JSON describing
the model config, training seed and tensor table, then the tensors as raw
little-endian row-major bytes in table order. Output depends only on the
inputs, so identical models give identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"chargescope-model v1\n"


def save_checkpoint(path, params: ModelParams, config: ModelConfig, seed: int, extra: dict = None) -> None:
    table = []
    blobs = []
    for name, arr in params.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        table.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        blobs.append(le.tobytes())
    header = {
        "config": asdict(config),
        "seed": int(seed),
        "tensors": table,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns ``(params, config, seed, extra)``."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a chargescope model checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        params = ModelParams()
        for entry in header["tensors"]:
            dt = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            buf = fh.read(count * dt.itemsize)
            if len(buf) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            params[entry["name"]] = np.frombuffer(buf, dtype=dt).reshape(entry["shape"]).astype(dt.newbyteorder("="))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last tensor")
    cfg = header["config"]
    cfg["conv_filters"] = tuple(cfg["conv_filters"])
    return params, ModelConfig(**cfg), header["seed"], header.get("extra", {})
