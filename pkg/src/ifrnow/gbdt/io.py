"""Binary model container.

Layout (little-endian)::

    magic        8 bytes  b"IFRNOWGB"
    version      u16
    header_len   u32
    header       JSON (utf-8, sorted keys): feature_names, config, metadata,
                 history, base_score (float.hex), n_trees
    per tree:    n_nodes u32, then n_nodes packed records of
                 feature i4 | threshold f8 | default_left u1 | left i4 |
                 right i4 | value f8 | cover f8 | gain f8
                 (nodes in preorder, child indices local to the tree)
    checksum     32 bytes SHA-256 of everything above

Identical models serialise to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptModel, FormatVersionMismatch
from .model import Model, TrainConfig, Tree

MAGIC = b"IFRNOWGB"
FORMAT_VERSION = 1
NODE_DTYPE = np.dtype(
    [
        ("feature", "<i4"),
        ("threshold", "<f8"),
        ("default_left", "u1"),
        ("left", "<i4"),
        ("right", "<i4"),
        ("value", "<f8"),
        ("cover", "<f8"),
        ("gain", "<f8"),
    ]
)
_DIGEST = 32


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def to_bytes(model: Model) -> bytes:
    header = {
        "feature_names": list(model.feature_names),
        "config": _jsonable(vars(model.config)),
        "metadata": _jsonable(model.metadata),
        "history": _jsonable(model.history),
        "base_score": float(model.base_score).hex(),
        "n_trees": len(model.trees),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blob)), blob]
    for tree in model.trees:
        rec = np.zeros(len(tree), dtype=NODE_DTYPE)
        for name in NODE_DTYPE.names:
            rec[name] = getattr(tree, name)
        parts.append(struct.pack("<I", len(tree)))
        parts.append(rec.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes) -> Model:
    if len(data) < len(MAGIC) + 6 + _DIGEST:
        raise CorruptModel("file too short")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptModel("checksum mismatch")
    if not body.startswith(MAGIC):
        raise CorruptModel("bad magic")
    version, hlen = struct.unpack_from("<HI", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"file version {version}, reader supports {FORMAT_VERSION}")
    pos = len(MAGIC) + 6
    try:
        header = json.loads(body[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        trees = []
        for _ in range(header["n_trees"]):
            (n_nodes,) = struct.unpack_from("<I", body, pos)
            pos += 4
            size = n_nodes * NODE_DTYPE.itemsize
            rec = np.frombuffer(body[pos : pos + size], dtype=NODE_DTYPE)
            if rec.shape[0] != n_nodes:
                raise CorruptModel("truncated tree section")
            pos += size
            trees.append(
                Tree(
                    feature=rec["feature"].astype(np.int32),
                    threshold=rec["threshold"].astype(np.float64),
                    default_left=rec["default_left"].astype(np.uint8),
                    left=rec["left"].astype(np.int32),
                    right=rec["right"].astype(np.int32),
                    value=rec["value"].astype(np.float64),
                    cover=rec["cover"].astype(np.float64),
                    gain=rec["gain"].astype(np.float64),
                )
            )
        if pos != len(body):
            raise CorruptModel("trailing bytes after tree section")
        config = TrainConfig(**header["config"])
    except (KeyError, ValueError, TypeError, struct.error) as exc:
        raise CorruptModel(f"malformed model: {exc}") from None
    return Model(
        trees=trees,
        base_score=float.fromhex(header["base_score"]),
        feature_names=tuple(header["feature_names"]),
        config=config,
        metadata=header["metadata"],
        history=header["history"],
    )


def save_model(model: Model, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(model))
    return path


def load_model(path) -> Model:
    return from_bytes(Path(path).read_bytes())


def checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
