"""The PTCK checkpoint container.

Layout: ``PTCK``, version u8, entry count u32 LE, then per entry a u16 LE name
length, the UTF-8 name, rank u8, rank x u32 LE dims and float32 LE data.
The model configuration travels alongside the weights as ``meta.*`` entries
so that a checkpoint is enough to rebuild its network.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data.raster import BadMagicError, RasterFormatError, TruncatedFileError, UnsupportedVersionError
from .model import FUSION_KINDS, REFINE_KINDS, UPSAMPLE_MODES, ModelConfig, PanTiny

MAGIC = b"PTCK"
VERSION = 1
META = "meta."
_ENUMS = {"fusion_kind": FUSION_KINDS, "refine_kind": REFINE_KINDS, "upsample_mode": UPSAMPLE_MODES}


def encode_entries(entries: "OrderedDict[str, np.ndarray]") -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_entries(buf: bytes, source: str = "<bytes>") -> "OrderedDict[str, np.ndarray]":
    def need(pos, n, what):
        if pos + n > len(buf):
            raise TruncatedFileError(f"{source}: truncated while reading {what} (need {pos + n} bytes, have {len(buf)})")

    need(0, 4, "magic")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    need(4, 5, "header")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported checkpoint version {version}")
    pos = 9
    out: OrderedDict = OrderedDict()
    for k in range(count):
        need(pos, 2, f"entry {k} name length")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, n + 1, f"entry {k} name")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        rank = buf[pos]
        pos += 1
        need(pos, 4 * rank, f"{name} dims")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        if name in out:
            raise RasterFormatError(f"{source}: duplicate entry {name!r}")
        size = int(np.prod(dims, dtype=np.int64))
        need(pos, 4 * size, f"{name} data")
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(buf):
        raise RasterFormatError(f"{source}: {len(buf) - pos} trailing bytes")
    return out


def config_entries(config: ModelConfig) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name in _ENUMS:
            v = _ENUMS[f.name].index(v)
        out[META + f.name] = np.array([float(v)], dtype=np.float32)
    return out


def config_from_entries(entries: dict) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = META + f.name
        if key not in entries:
            continue
        v = float(entries[key][0])
        if f.name in _ENUMS:
            v = _ENUMS[f.name][int(v)]
        elif f.type in ("bool", bool):
            v = bool(v)
        elif f.type in ("int", int):
            v = int(v)
        kwargs[f.name] = v
    return ModelConfig(**kwargs)


def save_checkpoint(model: PanTiny, path) -> None:
    entries = config_entries(model.config)
    entries.update(model.state_dict())
    Path(path).write_bytes(encode_entries(entries))


def load_checkpoint(path) -> PanTiny:
    entries = decode_entries(Path(path).read_bytes(), str(path))
    model = PanTiny(config_from_entries(entries))
    model.load_state_dict({k: v for k, v in entries.items() if not k.startswith(META)})
    return model
