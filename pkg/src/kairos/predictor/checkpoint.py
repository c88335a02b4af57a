"""Checkpoint files.

Layout (all integers little-endian, arrays float64 C-order)::

    b"KAIROS-TP/1\\n"
    ASCII decimal byte length N of the header, then b"\\n"
    N bytes of UTF-8 JSON (keys sorted, no whitespace)
    payload: the arrays listed in header["arrays"], back to back

Header keys: ``kind`` (``mtan-tp`` or ``plain-lstm``), ``model`` (network
hyperparameters), ``normalization``, ``config`` (resolved run config),
``training_log`` (per-epoch metrics), ``arrays`` (name, shape, byte offset
into the payload) and ``payload_bytes``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"KAIROS-TP/1\n"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(kind: str, model: dict, normalization: dict, arrays: dict[str, np.ndarray],
                      config: dict | None = None, training_log: list | None = None) -> bytes:
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "kind": kind,
        "model": model,
        "normalization": normalization,
        "config": config or {},
        "training_log": training_log or [],
        "arrays": entries,
        "payload_bytes": offset,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + str(len(blob)).encode() + b"\n" + blob + b"".join(chunks)


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a KAIROS-TP/1 checkpoint")
    rest = data[len(MAGIC):]
    size_line, sep, rest = rest.partition(b"\n")
    if not sep or not size_line.isdigit():
        raise CheckpointError("corrupt checkpoint header length")
    n = int(size_line)
    try:
        header = json.loads(rest[:n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = rest[n:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError("checkpoint payload size mismatch")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def write_checkpoint(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
