"""Versioned binary checkpoints, JSON manifests and JSONL logs.

Checkpoint layout (all little-endian)::

    magic     8 bytes   b"MOLOODCK"
    version   u16
    hlen      u32       length of the JSON header
    header    hlen bytes UTF-8 JSON (kind, shape, user fields)
    payload   n * f64
    checksum  32 bytes  sha256 over everything before it
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MOLOODCK"
VERSION = 1


def encode_checkpoint(kind: str, header: dict, payload: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(payload, dtype="<f8").ravel()
    head = json.dumps({"kind": kind, "n": int(arr.size), **header}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", VERSION, len(head)) + head + arr.tobytes()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes, kind: str | None = None) -> tuple[dict, np.ndarray]:
    if len(blob) < len(MAGIC) + 6 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch")
    version, hlen = struct.unpack_from("<HI", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 6
    header = json.loads(body[start:start + hlen].decode())
    payload = np.frombuffer(body[start + hlen:], dtype="<f8").astype(np.float64)
    if payload.size != header["n"]:
        raise CheckpointError("payload length does not match header")
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, got {header['kind']}")
    return header, payload


def atomic_write(path: str | Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_checkpoint(path, kind: str, header: dict, payload: np.ndarray) -> str:
    blob = encode_checkpoint(kind, header, payload)
    atomic_write(path, blob)
    return sha256_bytes(blob)


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes(), kind)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_jsonl(path, records) -> None:
    atomic_write(path, "".join(json.dumps(r, sort_keys=True, default=_default) + "\n" for r in records))


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
