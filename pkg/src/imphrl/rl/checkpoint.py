"""Versioned binary checkpoint container.

Layout::

    magic        8 bytes  b"IMPHRLCK"
    header_len   u32 little-endian
    header       UTF-8 JSON: format_version, config_hash, epoch, meta, tree, blobs
    payload      concatenated raw array blobs

``tree`` mirrors the saved nested structure; every tensor or array leaf is
replaced by ``{"__blob__": i}`` pointing at ``blobs[i]`` (name, kind, dtype,
shape, offset, nbytes). Dict keys keep their type via ``{"__dict__": [[k, v], ...]}``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .sac import CheckpointCorrupt

MAGIC = b"IMPHRLCK"
FORMAT_VERSION = 1


class ConfigMismatch(RuntimeError):
    """Checkpoint was written under a different configuration hash."""


def _flatten(obj: Any, blobs: list, arrays: list, name: str) -> Any:
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().contiguous().numpy()
        kind = "torch"
    elif isinstance(obj, np.ndarray):
        arr, kind = np.ascontiguousarray(obj), "numpy"
    elif isinstance(obj, dict):
        return {"__dict__": [[k, _flatten(v, blobs, arrays, f"{name}.{k}")] for k, v in obj.items()]}
    elif isinstance(obj, tuple):
        return {"__tuple__": [_flatten(v, blobs, arrays, f"{name}[{i}]") for i, v in enumerate(obj)]}
    elif isinstance(obj, list):
        return [_flatten(v, blobs, arrays, f"{name}[{i}]") for i, v in enumerate(obj)]
    elif isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    elif obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    else:
        raise TypeError(f"{name}: cannot serialize {type(obj).__name__}")
    blobs.append({"name": name, "kind": kind, "dtype": arr.dtype.str, "shape": list(arr.shape)})
    arrays.append(arr)
    return {"__blob__": len(blobs) - 1}


def _unflatten(obj: Any, leaves: list) -> Any:
    if isinstance(obj, list):
        return [_unflatten(v, leaves) for v in obj]
    if isinstance(obj, dict):
        if "__blob__" in obj:
            return leaves[obj["__blob__"]]
        if "__tuple__" in obj:
            return tuple(_unflatten(v, leaves) for v in obj["__tuple__"])
        if "__dict__" in obj:
            return {k: _unflatten(v, leaves) for k, v in obj["__dict__"]}
        raise CheckpointCorrupt("malformed tree node")
    return obj


def save_checkpoint(path: str | os.PathLike, tree: dict, config_hash: str, epoch: int, meta: dict | None = None) -> None:
    blobs: list[dict] = []
    arrays: list[np.ndarray] = []
    flat = _flatten(tree, blobs, arrays, "")
    offset = 0
    for b, a in zip(blobs, arrays):
        b["offset"], b["nbytes"] = offset, a.nbytes
        offset += a.nbytes
    header = json.dumps({"format_version": FORMAT_VERSION, "config_hash": config_hash, "epoch": int(epoch),
                         "meta": meta or {}, "tree": flat, "blobs": blobs}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(a.tobytes())
    os.replace(tmp, path)


def read_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise CheckpointCorrupt(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorrupt(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointCorrupt(f"{path}: unsupported format version {header.get('format_version')!r}")
    return header, raw[12 + n:]


def load_checkpoint(path: str | os.PathLike, config_hash: str | None = None, force: bool = False) -> tuple[dict, dict]:
    """Returns (tree, header). Refuses a config-hash mismatch unless ``force``."""
    header, payload = read_header(path)
    if config_hash is not None and header["config_hash"] != config_hash and not force:
        raise ConfigMismatch(f"{path}: config hash {header['config_hash'][:12]} does not match "
                             f"{config_hash[:12]} (use --force to override)")
    leaves = []
    for b in header["blobs"]:
        chunk = payload[b["offset"]:b["offset"] + b["nbytes"]]
        if len(chunk) != b["nbytes"]:
            raise CheckpointCorrupt(f"{path}: truncated blob {b['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(b["dtype"])).reshape(b["shape"]).copy()
        leaves.append(torch.from_numpy(arr) if b["kind"] == "torch" else arr)
    return _unflatten(header["tree"], leaves), header
