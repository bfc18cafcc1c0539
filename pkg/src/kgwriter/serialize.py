"""Versioned binary model files.

Layout (all integers little-endian):

    bytes 0..3    magic b"KGWB"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..15   header length L, uint64
    bytes 16..    UTF-8 JSON header of L bytes:
                  {"kind": str, "meta": {...},
                   "fields": [{"name": str, "shape": [int, ...]}, ...]}
    then          the field arrays, concatenated in header order, each as
                  row-major float64 little-endian raw bytes

Writes go through a temp file plus rename, and the JSON header uses sorted
keys, so identical inputs produce byte-identical files.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"KGWB"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(path, kind, meta, fields):
    """``fields`` is an ordered sequence of (name, float64 array)."""
    header = {
        "kind": kind,
        "meta": meta,
        "fields": [{"name": n, "shape": list(np.asarray(a).shape)} for n, a in fields],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in fields:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_model(path):
    """Returns (kind, meta, ordered {name: array})."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays = {}
        for f in header["fields"]:
            shape = tuple(f["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ModelFormatError(f"{path}: truncated array {f['name']}")
            arrays[f["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return header["kind"], header["meta"], arrays
