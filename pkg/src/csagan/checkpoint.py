"""Versioned binary checkpoint: magic, version, JSON header describing the
named blobs, then the raw payload.  A sha256 over the payload plus the
recorded length makes truncation and corruption detectable, and the
round-trip is bit-exact."""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

MAGIC = b"CSCK"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": len(payload), "nbytes": a.nbytes})
        payload += a.tobytes()
    header = json.dumps({
        "meta": meta,
        "entries": entries,
        "payload_nbytes": len(payload),
        "sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }).encode()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version} not supported (expected {VERSION})")
    if len(blob) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(blob[16:16 + hlen])
    payload = blob[16 + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, header says {header['payload_nbytes']}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    for e in header["entries"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
