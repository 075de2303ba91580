"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CALDNRCK"  u32 version
    repeated sections: 4-byte tag, u64 payload length, payload

Sections: CONF (JSON config), META (JSON scalars), PARM / ADMM / ADMV and
THRS (named-tensor tables), QUEU (queue dump), RNGS (JSON generator states).
A named-tensor table is u32 count, then per entry: u16 name length, name,
u8 dtype code, u8 ndim, u64 dims, raw little-endian data.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import Dict

import numpy as np

MAGIC = b"CALDNRCK"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8", 2: "|b1"}
_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1, np.dtype("bool"): 2}


class CheckpointError(ValueError):
    pass


def _pack_table(arrays: Dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        code = _CODES[arr.dtype]
        raw = name.encode()
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<BB", code, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())
    return out.getvalue()


def _unpack_table(buf: bytes) -> Dict[str, np.ndarray]:
    view = memoryview(buf)
    (count,) = struct.unpack_from("<I", view, 0)
    pos = 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + nlen]).decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", view, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        dtype = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dtype.itemsize
        if pos + size > len(view):
            raise CheckpointError(f"tensor {name!r} truncated")
        out[name] = np.frombuffer(bytes(view[pos : pos + size]), dtype=dtype).reshape(shape).copy()
        pos += size
    return out


def _pack_queues(queues) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(queues)))
    for entries in queues:
        entries = np.asarray(entries, dtype="<f8")
        k = entries.shape[0]
        d = entries.shape[1] if k else 0
        out.write(struct.pack("<II", k, d))
        out.write(entries.tobytes())
    return out.getvalue()


def _unpack_queues(buf: bytes):
    (count,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    queues = []
    for _ in range(count):
        k, d = struct.unpack_from("<II", buf, pos)
        pos += 8
        n = k * d * 8
        queues.append(np.frombuffer(buf[pos : pos + n], dtype="<f8").reshape(k, d).copy())
        pos += n
    return queues


def write_checkpoint(path: str, sections: dict) -> None:
    """``sections`` keys: conf, meta, rngs (JSON-able); params, adam_m, adam_v, thresholds (tables); queues (list)."""
    body = io.BytesIO()
    body.write(MAGIC + struct.pack("<I", VERSION))

    def put(tag: bytes, payload: bytes):
        body.write(tag + struct.pack("<Q", len(payload)) + payload)

    put(b"CONF", json.dumps(sections["conf"], sort_keys=True).encode())
    put(b"META", json.dumps(sections["meta"], sort_keys=True).encode())
    put(b"PARM", _pack_table(sections["params"]))
    put(b"ADMM", _pack_table(sections["adam_m"]))
    put(b"ADMV", _pack_table(sections["adam_v"]))
    put(b"THRS", _pack_table(sections["thresholds"]))
    put(b"QUEU", _pack_queues(sections["queues"]))
    put(b"RNGS", json.dumps(sections["rngs"], sort_keys=True).encode())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(body.getvalue())
    os.replace(tmp, path)


def read_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    raw = {}
    while pos < len(data):
        if pos + 12 > len(data):
            raise CheckpointError(f"{path}: truncated section header")
        tag = data[pos : pos + 4].decode()
        (length,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if pos + length > len(data):
            raise CheckpointError(f"{path}: section {tag} truncated")
        raw[tag] = data[pos : pos + length]
        pos += length
    missing = {"CONF", "META", "PARM", "ADMM", "ADMV", "THRS", "QUEU", "RNGS"} - set(raw)
    if missing:
        raise CheckpointError(f"{path}: missing sections {sorted(missing)}")
    return {
        "conf": json.loads(raw["CONF"]),
        "meta": json.loads(raw["META"]),
        "params": _unpack_table(raw["PARM"]),
        "adam_m": _unpack_table(raw["ADMM"]),
        "adam_v": _unpack_table(raw["ADMV"]),
        "thresholds": _unpack_table(raw["THRS"]),
        "queues": _unpack_queues(raw["QUEU"]),
        "rngs": json.loads(raw["RNGS"]),
    }
