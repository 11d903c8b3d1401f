"""Tiny versioned binary container.

Layout::

    magic      4 bytes      b"LTDS" (dataset) / b"LTCK" (checkpoint)
    version    uint32 LE
    hdr_len    uint32 LE
    header     hdr_len bytes of UTF-8 JSON (sorted keys): metadata + array table
    payload    arrays back to back, little-endian, in array-table order

Arrays are stored as float64 (``<f8``) or int64 (``<i8``).  The JSON is
rendered deterministically so equal content gives byte-identical files.
"""
from __future__ import annotations

import json
import struct

import numpy as np

VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class FormatError(ValueError):
    pass


def _canon(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        return np.ascontiguousarray(a, dtype="<f8")
    if a.dtype.kind in "iub":
        return np.ascontiguousarray(a, dtype="<i8")
    raise TypeError(f"unsupported array dtype {a.dtype}")


def dumps(magic: bytes, meta: dict, arrays: dict) -> bytes:
    table, blobs = [], []
    for name, a in arrays.items():
        a = _canon(a)
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True,
                        separators=(",", ":")).encode()
    return b"".join([magic, struct.pack("<II", VERSION, len(header)), header, *blobs])


def loads(magic: bytes, data: bytes):
    if len(data) < 12:
        raise FormatError("file too short for a container header")
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (reader is {VERSION})")
    if 12 + hlen > len(data):
        raise FormatError("truncated container header")
    try:
        header = json.loads(data[12:12 + hlen].decode())
        meta, table = header["meta"], header["arrays"]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise FormatError(f"corrupt container header: {e}") from None
    pos, arrays = 12 + hlen, {}
    for entry in table:
        dt = _DTYPES.get(entry.get("dtype"))
        if dt is None:
            raise FormatError(f"unsupported dtype in header: {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(data):
            raise FormatError(f"truncated payload in array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data, dt, count=nbytes // dt.itemsize,
                                              offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after payload")
    return meta, arrays


def write(path, magic: bytes, meta: dict, arrays: dict) -> None:
    with open(path, "wb") as f:
        f.write(dumps(magic, meta, arrays))


def read(path, magic: bytes):
    with open(path, "rb") as f:
        return loads(magic, f.read())
