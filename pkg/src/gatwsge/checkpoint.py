"""Binary checkpoint container.

Layout::

    b"GATCKPT1"                     8-byte magic
    uint32 little-endian            length of the JSON header
    JSON header (utf-8)             config echo, metadata, array table
    raw arrays                      little-endian float32, declaration order

Offsets in the array table are relative to the start of the raw section. A
plain-text sidecar ``<file>.manifest.txt`` lists ``name  shape  offset``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import GaT, ModelConfig

MAGIC = b"GATCKPT1"
FORMAT_VERSION = 1


def _encode(model: GaT, meta: dict | None):
    table, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "arrays": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return header, MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + b"".join(blobs)


def save_checkpoint(path, model: GaT, meta: dict | None = None) -> Path:
    path = Path(path)
    header, payload = _encode(model, meta)
    path.write_bytes(payload)
    lines = [f"{a['name']}\t{'x'.join(map(str, a['shape'])) or 'scalar'}\t{a['offset']}"
             for a in header["arrays"]]
    Path(str(path) + ".manifest.txt").write_text("name\tshape\toffset\n" + "\n".join(lines) + "\n")
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path, dtype=torch.float32) -> tuple[GaT, dict]:
    """Rebuild the model stored at ``path``; returns ``(model, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    base = 12 + n
    model = GaT(ModelConfig.from_dict(header["config"]))
    state = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=entry["nbytes"] // 4, offset=start)
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).astype(np.float32))
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing arrays {sorted(missing)}")
    model.load_state_dict(state)
    return model.to(dtype), header["meta"]
