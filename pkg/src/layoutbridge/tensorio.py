"""Little-endian tensor container used for checkpoints, feature grids and
score matrices.

Layout::

    b"LTL1"                      4 bytes magic
    uint32 (LE)                  header length N
    N bytes UTF-8 JSON           {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
    float32 (LE) payload         each tensor, C order, in header order

The JSON header is written with sorted keys and no whitespace so identical
content gives identical bytes.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Tuple

import numpy as np

MAGIC = b"LTL1"


class FormatError(ValueError):
    pass


def dumps_tensors(tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    header = json.dumps({"meta": meta or {}, "tensors": manifest}, sort_keys=True, separators=(",", ":"))
    hb = header.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(hb)), hb]
    for v in tensors.values():
        chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(chunks)


def loads_tensors(data: bytes) -> Tuple["OrderedDict[str, np.ndarray]", dict]:
    if data[:4] != MAGIC:
        raise FormatError("bad magic; not an LTL1 tensor file")
    if len(data) < 8:
        raise FormatError("truncated header")
    (n,) = struct.unpack("<I", data[4:8])
    if 8 + n > len(data):
        raise FormatError("truncated header")
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    if not (isinstance(header, dict) and isinstance(header.get("tensors"), list) and isinstance(header.get("meta"), dict)):
        raise FormatError("header must hold 'meta' and 'tensors'")
    pos = 8 + n
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["tensors"]:
        try:
            shape = tuple(int(s) for s in entry["shape"])
            name = str(entry["name"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"bad tensor entry {entry!r}") from None
        if name in tensors or any(s < 0 for s in shape):
            raise FormatError(f"bad tensor entry {entry!r}")
        count = int(np.prod(shape)) if shape else 1
        end = pos + 4 * count
        if end > len(data):
            raise FormatError(f"payload truncated in tensor {name!r}")
        arr = np.frombuffer(data[pos:end], dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes")
    return tensors, header["meta"]


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_tensors(tensors, meta))


def load_tensors(path) -> Tuple["OrderedDict[str, np.ndarray]", dict]:
    return loads_tensors(Path(path).read_bytes())


def save_checkpoint(model, path) -> None:
    save_tensors(path, model.params, {"kind": "layout-transformer", "config": model.config.to_dict()})


def load_checkpoint(path):
    from .model import LayoutTransformer, ModelConfig

    tensors, meta = load_tensors(path)
    if meta.get("kind") != "layout-transformer" or not isinstance(meta.get("config"), dict):
        raise FormatError("not a layout-transformer checkpoint")
    try:
        return LayoutTransformer(ModelConfig.from_dict(meta["config"]), tensors)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint does not match its configuration: {exc}") from None
