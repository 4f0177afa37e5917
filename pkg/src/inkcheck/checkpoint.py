"""Versioned binary container for model parameters.

Layout::

    b"INKCKPT\\n" | u32 LE header length | JSON header | float64 LE blocks

The header carries ``format_version``, the model ``kind``, its ``config``
and a SHA-256 ``config_digest`` of the canonical config JSON, the ordered
``layers`` list (name and shape of each block) and free-form ``meta``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"INKCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is malformed or does not match the expected configuration."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def encode_checkpoint(kind: str, config: dict, params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    names = list(params)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "config_digest": config_digest(config),
        "layers": [{"name": n, "shape": list(np.shape(params[n]))} for n in names],
        "meta": meta or {},
    }
    head = canonical_json(header).encode("utf-8")
    blocks = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    return MAGIC + struct.pack("<I", len(head)) + head + blocks


def decode_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    (size,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start:start + size].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
    if header["config_digest"] != config_digest(header["config"]):
        raise CheckpointError("config digest does not match stored config")
    pos = start + size
    params = {}
    for layer in header["layers"]:
        count = int(np.prod(layer["shape"], dtype=np.int64))
        if pos + 8 * count > len(raw):
            raise CheckpointError(f"parameter block {layer['name']} is truncated")
        block = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
        params[layer["name"]] = block.astype(np.float64).reshape(layer["shape"])
        pos += 8 * count
    if pos != len(raw):
        raise CheckpointError("trailing or missing parameter bytes")
    return header, params


def save_checkpoint(path: str | Path, kind: str, config: dict, params: dict[str, np.ndarray],
                    meta: dict | None = None) -> str:
    """Write the container and return the SHA-256 of its bytes."""
    raw = encode_checkpoint(kind, config, params, meta)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load_checkpoint(path: str | Path, kind: str | None = None,
                    expected_config: dict | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    header, params = decode_checkpoint(raw)
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {header['kind']}")
    if expected_config is not None and header["config_digest"] != config_digest(expected_config):
        raise CheckpointError("checkpoint was trained with a different configuration")
    header["file_digest"] = hashlib.sha256(raw).hexdigest()
    return header, params
