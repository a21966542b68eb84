"""Checkpoint files: one JSON header line, then little-endian float64 payload.

The header lists every tensor's name, shape and byte offset (relative to the
first payload byte) in declaration order, plus free-form metadata.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "magail-checkpoint"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format": FORMAT, "version": VERSION, "meta": meta or {},
              "tensors": entries, "nbytes": offset}
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if len(payload) != header["nbytes"]:
        raise ValueError(f"{path}: truncated payload ({len(payload)} of {header['nbytes']} bytes)")
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return tensors, header["meta"]
