"""Checkpoint container and its on-disk format.

Layout: the magic bytes ``DANCKPT1``, a little-endian uint64 header
length, a JSON header (kind, task tag, config echo, iteration counter and
a per-tensor manifest of name / shape / byte offset), then the raw
little-endian float32 tensor data. Saving is atomic (temp file + rename)
and the round trip is bitwise.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DANCKPT1"


@dataclass
class Checkpoint:
    kind: str  # "expert" or "dan"
    task_tag: str
    config: dict
    iteration: int = 0
    tensors: dict = field(default_factory=dict)  # name -> float32 ndarray

    def checksum(self, prefix: str = "") -> str:
        """SHA-256 over tensors under ``prefix``, keyed by unprefixed name.

        Comparable with ``params_checksum`` over the matching parameters.
        """
        digest = hashlib.sha256()
        for name in sorted(self.tensors):
            if name.startswith(prefix):
                digest.update(name[len(prefix):].encode("utf-8"))
                digest.update(np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes())
        return digest.hexdigest()


def params_checksum(params: dict) -> str:
    """SHA-256 over named parameter tensors (dannet Tensors or ndarrays)."""
    digest = hashlib.sha256()
    for name in sorted(params):
        t = params[name]
        arr = t.data if hasattr(t, "data") else np.asarray(t)
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return digest.hexdigest()


def save_checkpoint(path, ckpt: Checkpoint):
    names = list(ckpt.tensors)
    blobs = []
    manifest = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        blobs.append(arr.tobytes())
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps(
        {
            "format": MAGIC.decode("ascii"),
            "kind": ckpt.kind,
            "task_tag": ckpt.task_tag,
            "config": ckpt.config,
            "iteration": ckpt.iteration,
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {buf[:8]!r})")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    data_start = 16 + hlen
    tensors = {}
    for item in header["tensors"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = data_start + item["offset"]
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[item["name"]] = np.ascontiguousarray(arr)
    return Checkpoint(
        kind=header["kind"],
        task_tag=header["task_tag"],
        config=header["config"],
        iteration=header["iteration"],
        tensors=tensors,
    )
