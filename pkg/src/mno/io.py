"""Binary containers (dataset, checkpoint) and exact JSON serialization.

Both binary formats share one layout: an 8-byte magic, a little-endian uint64
header length, a UTF-8 JSON header, then float64 little-endian payloads in the
order the header's ``arrays`` list declares.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .stochsim.dataset import SCHEMA_VERSION, EnsembleDataset, NormStats

DATASET_MAGIC = b"MNODS\x00\x00\x01"
CHECKPOINT_MAGIC = b"MNOCK\x00\x00\x01"


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------- JSON

def _encode(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite number {x} cannot be serialized")
        return format(x, ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    return _encode(obj)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------ container

def pack(magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    text = dumps(header).encode("utf-8")
    parts = [magic, struct.pack("<Q", len(text)), text]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def unpack(magic: bytes, data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != magic:
        raise FormatError(f"bad magic {data[:8]!r}, expected {magic!r}")
    if len(data) < 16:
        raise FormatError("file too short for a header")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise FormatError("truncated header")
    try:
        header = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    offset = 16 + n
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes")
    return header, arrays


# -------------------------------------------------------------------- dataset

def dataset_bytes(ds: EnsembleDataset) -> bytes:
    header = {
        "schema_version": SCHEMA_VERSION,
        "meta": ds.meta,
        "normalization": ds.norm.to_dict() if ds.norm is not None else None,
    }
    return pack(DATASET_MAGIC, header, {"u0": ds.u0, "uT": ds.uT, "t": ds.t})


def write_dataset(path, ds: EnsembleDataset) -> str:
    """Write an MNODS file; returns its sha256."""
    data = dataset_bytes(ds)
    Path(path).write_bytes(data)
    return sha256_bytes(data)


def read_dataset(path) -> EnsembleDataset:
    header, arrays = unpack(DATASET_MAGIC, Path(path).read_bytes())
    if header.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported dataset schema {header.get('schema_version')}")
    norm = header.get("normalization")
    return EnsembleDataset(
        u0=arrays["u0"],
        uT=arrays["uT"],
        t=arrays["t"],
        meta=header.get("meta", {}),
        norm=NormStats.from_dict(norm) if norm else None,
    )
