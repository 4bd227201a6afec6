"""Binary/JSON hybrid container and atomic file writes.

Layout::

    b"DSEA1\\n"
    8-byte little-endian header length
    UTF-8 JSON header  {"descriptor": {...}, "arrays": [{name, dtype, shape, offset, nbytes}]}
    raw little-endian array bytes, in header order

No timestamps or other volatile fields are written, so identical inputs give
identical bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"DSEA1\n"


def atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write(path, descriptor, arrays):
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        blob = arr.astype(dt, copy=False).tobytes()
        entries.append(
            {"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"descriptor": descriptor, "arrays": entries}, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs))


def read(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a DSEA1 container")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    body = raw[start + hlen :]
    arrays = {}
    for e in header["arrays"]:
        chunk = body[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["descriptor"], arrays
